//! Packed binary snapshots.
//!
//! Layout, all little-endian: the 8-byte magic `KWSNAP01`, `u64` ring size
//! `L`, `u64` sample count, then per sample an `f64` time followed by
//! `ceil(L/64)` `u64` words holding 64 sites each (site `i` is bit `i % 64`
//! of word `i / 64`).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::lattice::RingConfiguration;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"KWSNAP01";

pub fn write_snapshots<W: Write>(mut out: W, size: usize, samples: &[(f64, RingConfiguration)]) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&(size as u64).to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    for (t, eta) in samples {
        if eta.len() != size {
            return Err(Error::param("snapshot size mismatch"));
        }
        out.write_all(&t.to_le_bytes())?;
        for w in eta.to_words() {
            out.write_all(&w.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshots<R: Read>(mut input: R) -> Result<(usize, Vec<(f64, RingConfiguration)>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::InvalidConfiguration("not a snapshot file".into()));
    }
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    let size = u64::from_le_bytes(buf) as usize;
    input.read_exact(&mut buf)?;
    let count = u64::from_le_bytes(buf) as usize;
    let words = size.div_ceil(64);
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        input.read_exact(&mut buf)?;
        let t = f64::from_le_bytes(buf);
        let mut ws = Vec::with_capacity(words);
        for _ in 0..words {
            input.read_exact(&mut buf)?;
            ws.push(u64::from_le_bytes(buf));
        }
        samples.push((t, RingConfiguration::from_words(&ws, size)?));
    }
    Ok((size, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let eta = RingConfiguration::new((0..70).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let mut buf = Vec::new();
        write_snapshots(&mut buf, 70, &[(1.5, eta.clone())]).unwrap();
        assert_eq!(buf.len(), 8 + 8 + 8 + 8 + 2 * 8);
        assert_eq!(&buf[8..16], &70u64.to_le_bytes());
        assert_eq!(buf[32] & 1, 1);
        let (size, back) = read_snapshots(buf.as_slice()).unwrap();
        assert_eq!(size, 70);
        assert_eq!(back, vec![(1.5, eta)]);
        assert!(read_snapshots(&b"garbage!"[..]).is_err());
    }
}
