use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use super::{ErrorCode, ServerState, WireMessage};
use crate::error::Result;

/// Thread-per-connection line server.
pub struct Server {
    listener: TcpListener,
    state: Arc<ServerState>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, state: Arc<ServerState>) -> Result<Self> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            state,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn state(&self) -> &Arc<ServerState> {
        &self.state
    }

    /// Accepts connections forever. Per-connection failures only close that
    /// connection.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let Ok(stream) = stream else { continue };
            let state = Arc::clone(&self.state);
            thread::spawn(move || {
                let _ = serve_connection(&state, stream);
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> thread::JoinHandle<Result<()>> {
        thread::spawn(move || self.run())
    }
}

fn serve_connection(state: &ServerState, stream: TcpStream) -> std::io::Result<()> {
    stream.set_read_timeout(state.config().read_timeout)?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let limit = state.config().max_line_bytes;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = (&mut reader).take(limit as u64 + 1).read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        if buf.last() != Some(&b'\n') && buf.len() > limit {
            let msg = WireMessage::error(state.epoch(), ErrorCode::Malformed, "line too long");
            writer.write_all(msg.to_line().as_bytes())?;
            return Ok(());
        }
        let reply = state.handle_line(&buf);
        writer.write_all(reply.to_line().as_bytes())?;
    }
}
