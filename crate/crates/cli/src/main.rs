//! `fzk`: owner, server and user front end.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use clap::{Args, Parser, Subcommand};
use fuzzkey::bench::{
    accuracy_csv, load_word_list, measure_accuracy, run_bench, synth_corpus, AccuracyRow, BenchConfig,
};
use fuzzkey::crypto::{keygen_with, KeyMaterial, DEFAULT_SYMBOL_BITS, DEFAULT_TRAPDOOR_BITS};
use fuzzkey::index::{build_listing_index, build_trie_index, extract_keywords, IndexKind};
use fuzzkey::multiuser::{blind_request, PublishedDirectory, ServerKey, UserDirectory};
use fuzzkey::service::{Client, Server, ServerConfig, ServerState, DEFAULT_PORT};
use fuzzkey::vfks::{build_auth_trie, verify};
use fuzzkey::{make_request, normalize_keyword, Corpus, Error, Index, Method, Result};
use rand::rngs::OsRng;
use rand::RngCore;

#[derive(Parser)]
#[command(name = "fzk", version, about = "Fuzzy keyword search over encrypted indexes")]
struct Cli {
    /// Secret key file.
    #[arg(long, global = true, env = "FZ_KEYFILE", default_value = "fuzzkey.key")]
    keyfile: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a secret key file.
    Keygen {
        #[arg(long, default_value_t = 128)]
        lambda: usize,
        /// Trapdoor length l in bits.
        #[arg(long, default_value_t = DEFAULT_TRAPDOOR_BITS)]
        bits: usize,
        /// Symbol width n in bits.
        #[arg(long, default_value_t = DEFAULT_SYMBOL_BITS)]
        symbol_bits: usize,
        /// Derive the key deterministically from this string.
        #[arg(long)]
        seed: Option<String>,
        /// Overwrite an existing key file.
        #[arg(long)]
        force: bool,
    },
    /// Build an index from a directory of text files (file name = fid).
    Build {
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "wildcard")]
        method: Method,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// listing, trie or auth.
        #[arg(long, default_value = "trie")]
        kind: IndexKind,
    },
    /// Serve an index over TCP.
    Serve {
        index: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Blinding key file; enables multi-user mode and is reloaded when it changes.
        #[arg(long)]
        server_key: Option<PathBuf>,
        #[arg(long, default_value_t = 4096)]
        max_trapdoors: usize,
    },
    /// Search a server and print the matching fids.
    Search(SearchArgs),
    /// Search with proof checking.
    Verify {
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value_t = 1.0)]
        sample_rate: f64,
    },
    /// Run the benchmark suite and write CSV.
    Bench {
        #[arg(long, short, default_value = "bench.csv")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "wildcard,gram")]
        methods: Vec<Method>,
        #[arg(long = "d", value_delimiter = ',', default_value = "1,2")]
        ds: Vec<usize>,
        #[arg(long, default_value_t = 7.44)]
        avg_len: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// One word per line, used instead of the synthetic corpus.
        #[arg(long)]
        word_list: Option<PathBuf>,
        /// Also measure d = 1 search accuracy per method and write it here.
        #[arg(long)]
        accuracy_out: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        accuracy_queries: usize,
    },
    /// Enroll a user; writes their personal key.
    Enroll {
        user: String,
        #[command(flatten)]
        dir: DirectoryArgs,
        /// Where to write the new user key (hex).
        #[arg(long)]
        user_key_out: PathBuf,
    },
    /// Revoke a user and rotate the blinding key.
    Revoke {
        user: String,
        #[command(flatten)]
        dir: DirectoryArgs,
    },
}

#[derive(Args)]
struct SearchArgs {
    word: String,
    k: usize,
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_PORT}"))]
    addr: String,
    /// Published user directory (multi-user servers).
    #[arg(long, requires_all = ["user", "user_key"])]
    directory: Option<PathBuf>,
    #[arg(long)]
    user: Option<String>,
    /// File holding the user key in hex.
    #[arg(long)]
    user_key: Option<PathBuf>,
    /// Also print the matched keyword next to each fid.
    #[arg(long)]
    show_keywords: bool,
}

#[derive(Args)]
struct DirectoryArgs {
    /// Owner directory state.
    #[arg(long, default_value = "owner.fzuo")]
    state: PathBuf,
    /// Published directory for users.
    #[arg(long, default_value = "users.fzud")]
    publish: PathBuf,
    /// Blinding key file for the server.
    #[arg(long, default_value = "server.fzxi")]
    server_key: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fzk: error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Keygen { lambda, bits, symbol_bits, seed, force } => {
            if cli.keyfile.exists() && !force {
                return Err(Error::BadParameter(format!(
                    "{} exists; pass --force to overwrite",
                    cli.keyfile.display()
                )));
            }
            let km = keygen_with(lambda, bits, symbol_bits, seed.as_deref().map(str::as_bytes))?;
            km.save(&cli.keyfile)?;
            println!("wrote {}", cli.keyfile.display());
        }
        Command::Build { corpus, out, method, d, kind } => {
            let km = KeyMaterial::load(&cli.keyfile)?;
            let corpus = read_corpus(&corpus)?;
            let index = match kind {
                IndexKind::Listing => Index::Listing(build_listing_index(&corpus, d, &km, method)?),
                IndexKind::Trie => Index::Trie(build_trie_index(&corpus, d, &km, method)?),
                IndexKind::AuthTrie => Index::AuthTrie(build_auth_trie(&corpus, d, &km, method)?),
            };
            index.save(&out)?;
            println!(
                "{} keywords, {} entries, {} bytes -> {}",
                corpus.len(),
                index.entry_count(),
                index.to_bytes().len(),
                out.display()
            );
        }
        Command::Serve { index, port, bind, server_key, max_trapdoors } => {
            let index = Index::load(&index)?;
            let config = ServerConfig { max_trapdoors, ..ServerConfig::default() };
            let state = match &server_key {
                Some(p) => {
                    let sk = ServerKey::load(p)?;
                    ServerState::with_blinding(index, config, sk.epoch, sk.xi)
                }
                None => ServerState::new(index, config),
            };
            let server = Server::bind((bind.as_str(), port), Arc::new(state))?;
            if let Some(p) = server_key {
                watch_server_key(p, Arc::clone(server.state()));
            }
            println!("listening on {}", server.local_addr()?);
            std::io::stdout().flush()?;
            server.run()?;
        }
        Command::Search(args) => {
            let km = KeyMaterial::load(&cli.keyfile)?;
            let (_, outcome) = remote_search(&km, &args)?;
            print_results(&km, &outcome.results, args.show_keywords)?;
        }
        Command::Verify { search, sample_rate } => {
            let km = KeyMaterial::load(&cli.keyfile)?;
            let (req, outcome) = remote_search(&km, &search)?;
            let proofs = outcome
                .proofs
                .ok_or_else(|| Error::BadParameter("server index is not verifiable".into()))?;
            let verdict = verify(&req, &outcome.results, &proofs, &km, sample_rate);
            if !verdict.accepted {
                eprintln!(
                    "fzk: verification failed: {:?} at proof {}",
                    verdict.reason,
                    verdict.failing_index.map_or("-".into(), |i| i.to_string())
                );
                return Ok(ExitCode::from(1));
            }
            print_results(&km, &outcome.results, search.show_keywords)?;
            eprintln!("verified {} proofs", proofs.len());
        }
        Command::Bench {
            out,
            counts,
            methods,
            ds,
            avg_len,
            seed,
            queries,
            word_list,
            accuracy_out,
            accuracy_queries,
        } => {
            let config = BenchConfig {
                keyword_counts: counts,
                methods,
                ds,
                avg_len,
                seed,
                queries,
                word_list,
                ..BenchConfig::default()
            };
            let report = run_bench(&config)?;
            report.write_csv(&out)?;
            println!("{} rows -> {}", report.rows.len(), out.display());
            if let Some(path) = accuracy_out {
                let mut rows = Vec::new();
                for &count in &config.keyword_counts {
                    let corpus = match &config.word_list {
                        Some(p) => load_word_list(p)?.into_iter().take(count).collect(),
                        None => synth_corpus(count, config.avg_len, config.seed)?,
                    };
                    for &method in &config.methods {
                        let acc = measure_accuracy(&corpus, method, accuracy_queries, config.seed)?;
                        rows.push(AccuracyRow::new(format!("n{count}"), method, corpus.len(), &acc));
                    }
                }
                std::fs::write(&path, accuracy_csv(&rows))?;
                println!("{} accuracy rows -> {}", rows.len(), path.display());
            }
        }
        Command::Enroll { user, dir, user_key_out } => {
            let mut directory = open_directory(&cli.keyfile, &dir)?;
            let mut key = [0u8; 32];
            OsRng.fill_bytes(&mut key);
            directory.enroll_user(&user, &key, &mut OsRng)?;
            write_key_file(&user_key_out, &hex::encode(key))?;
            save_directory(&directory, &dir)?;
            println!("enrolled {user} at epoch {}", directory.epoch());
        }
        Command::Revoke { user, dir } => {
            let mut directory = UserDirectory::load(&dir.state, &mut OsRng)?;
            directory.revoke_user(&user, &mut OsRng)?;
            save_directory(&directory, &dir)?;
            println!("revoked {user}; epoch is now {}", directory.epoch());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_corpus(dir: &Path) -> Result<Corpus> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    let mut corpus = Corpus::new();
    for entry in entries {
        if !entry.file_type()?.is_file() {
            continue;
        }
        let fid = entry.file_name().to_string_lossy().into_owned().into_bytes();
        let text = String::from_utf8_lossy(&std::fs::read(entry.path())?).into_owned();
        for w in extract_keywords(&text) {
            corpus.entry(w).or_default().push(fid.clone());
        }
    }
    Ok(corpus)
}

fn remote_search(km: &KeyMaterial, args: &SearchArgs) -> Result<(fuzzkey::SearchRequest, fuzzkey::service::SearchOutcome)> {
    let word = normalize_keyword(&args.word)?;
    let mut client = Client::connect(&args.addr)?;
    let info = client.hello()?;
    if info.trapdoor_bits != km.trapdoor_bits() || info.symbol_bits != km.symbol_bits() {
        return Err(Error::BadParameter(format!(
            "server index uses l = {}, n = {}; key has l = {}, n = {}",
            info.trapdoor_bits,
            info.symbol_bits,
            km.trapdoor_bits(),
            km.symbol_bits()
        )));
    }
    let req = make_request(&word, args.k, km, info.method);
    let outcome = match (&args.directory, info.multi_user) {
        (Some(path), _) => {
            let dir = PublishedDirectory::load(path)?;
            let user = args.user.as_deref().unwrap_or_default();
            let key = read_key_file(args.user_key.as_deref().expect("required by clap"))?;
            let xi = dir.unwrap_for(user, &key)?;
            client.search(&blind_request(&req, &xi), dir.epoch)?
        }
        (None, true) => {
            return Err(Error::BadParameter(
                "server is in multi-user mode; pass --directory, --user and --user-key".into(),
            ))
        }
        (None, false) => client.search(&req, info.epoch)?,
    };
    Ok((req, outcome))
}

fn print_results(km: &KeyMaterial, results: &fuzzkey::ResultSet, show_keywords: bool) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut out = std::io::stdout().lock();
    for (fid, keyword) in results.decrypt(km)? {
        let fid = String::from_utf8_lossy(&fid).into_owned();
        if show_keywords {
            writeln!(out, "{fid}\t{keyword}")?;
        } else if seen.insert(fid.clone()) {
            writeln!(out, "{fid}")?;
        }
    }
    Ok(())
}

fn open_directory(keyfile: &Path, dir: &DirectoryArgs) -> Result<UserDirectory> {
    if dir.state.exists() {
        UserDirectory::load(&dir.state, &mut OsRng)
    } else {
        Ok(UserDirectory::new(KeyMaterial::load(keyfile)?.xi().to_vec()))
    }
}

fn save_directory(directory: &UserDirectory, dir: &DirectoryArgs) -> Result<()> {
    directory.save(&dir.state)?;
    directory.publish().save(&dir.publish)?;
    directory.server_key().save(&dir.server_key)
}

fn write_key_file(path: &Path, hex_key: &str) -> Result<()> {
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
    writeln!(opts.open(path)?, "{hex_key}")?;
    Ok(())
}

fn read_key_file(path: &Path) -> Result<Vec<u8>> {
    let text = std::fs::read_to_string(path)?;
    hex::decode(text.trim()).map_err(|e| Error::Malformed(format!("user key: {e}")))
}

/// Polls the blinding key file and installs a new epoch when it changes.
fn watch_server_key(path: PathBuf, state: Arc<ServerState>) {
    std::thread::spawn(move || {
        let modified = |p: &Path| std::fs::metadata(p).and_then(|m| m.modified()).ok();
        let mut last: Option<SystemTime> = modified(&path);
        loop {
            std::thread::sleep(Duration::from_millis(250));
            let now = modified(&path);
            if now == last {
                continue;
            }
            if let Ok(sk) = ServerKey::load(&path) {
                if sk.epoch != state.epoch() {
                    state.rotate(sk.epoch, sk.xi);
                    eprintln!("fzk: rotated to epoch {}", sk.epoch);
                }
                last = now;
            }
        }
    });
}
