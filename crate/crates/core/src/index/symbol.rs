use crate::crypto::Trapdoor;
use crate::error::{Error, Result};

/// A trapdoor cut into `l / n` symbols of `n` bits each, most significant
/// bits first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolSequence {
    symbol_bits: usize,
    symbols: Vec<u16>,
}

impl SymbolSequence {
    pub fn symbols(&self) -> &[u16] {
        &self.symbols
    }

    pub fn symbol_bits(&self) -> usize {
        self.symbol_bits
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Packs the symbols back into the trapdoor they came from.
    pub fn recompose(&self) -> Trapdoor {
        let n = self.symbol_bits;
        let mut out = Vec::with_capacity(self.symbols.len() * n / 8);
        let (mut acc, mut held) = (0u32, 0usize);
        for &s in &self.symbols {
            acc = (acc << n) | u32::from(s);
            held += n;
            while held >= 8 {
                held -= 8;
                out.push((acc >> held) as u8);
                acc &= (1 << held) - 1;
            }
        }
        Trapdoor::from_bytes(out)
    }
}

pub(crate) fn check_symbol_bits(l: usize, n: usize) -> Result<()> {
    if n == 0 || n > 16 || l % n != 0 {
        return Err(Error::BadParameter(format!(
            "symbol width {n} must be in 1..=16 and divide {l}"
        )));
    }
    Ok(())
}

/// Splits `t` into `n`-bit symbols.
pub fn symbolize(t: &Trapdoor, n: usize) -> Result<SymbolSequence> {
    check_symbol_bits(t.bits(), n)?;
    Ok(SymbolSequence {
        symbol_bits: n,
        symbols: symbols_of(t.as_bytes(), n).collect(),
    })
}

/// Allocation-free symbol iterator; `n` must already be validated.
pub(crate) fn symbols_of(bytes: &[u8], n: usize) -> impl Iterator<Item = u16> + '_ {
    let mask = (1u32 << n) - 1;
    let mut acc = 0u32;
    let mut held = 0usize;
    let mut iter = bytes.iter();
    std::iter::from_fn(move || {
        while held < n {
            acc = (acc << 8) | u32::from(*iter.next()?);
            held += 8;
        }
        held -= n;
        let s = (acc >> held) & mask;
        acc &= (1 << held) - 1;
        Some(s as u16)
    })
}
