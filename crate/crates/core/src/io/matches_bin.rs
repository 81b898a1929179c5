//! Binary match file, little-endian:
//!
//! ```text
//! magic "NSFMMTCH" | version u32 | image count u32
//! per pair: i u32 | j u32 | count u32 | count × (fi u32, fj u32, ui f32, vi f32, uj f32, vj f32)
//! ```
//!
//! Pairs are written in ascending `(i, j)` order and read until end of file.

use std::io::{self, Read, Write};

use nalgebra::Vector2;

use super::IoError;
use crate::matches::{FeatureMatch, MatchSet};

pub const MAGIC: &[u8; 8] = b"NSFMMTCH";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
const ENTRY_LEN: usize = 24;

pub fn write_matches<W: Write>(mut out: W, set: &MatchSet) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&set.image_count.to_le_bytes())?;
    let mut buf = Vec::new();
    for (&(i, j), ms) in &set.pairs {
        buf.clear();
        for v in [i, j, ms.len() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for m in ms {
            buf.extend_from_slice(&m.fi.to_le_bytes());
            buf.extend_from_slice(&m.fj.to_le_bytes());
            for v in [m.pi.x, m.pi.y, m.pj.x, m.pj.y] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

/// Fills `buf` completely; returns how many bytes were read before end of
/// file.
fn read_full<R: Read>(input: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match input.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn u32_at(b: &[u8], k: usize) -> u32 {
    u32::from_le_bytes(b[4 * k..4 * k + 4].try_into().expect("4 bytes"))
}

fn f32_at(b: &[u8], k: usize) -> f64 {
    f32::from_le_bytes(b[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64
}

pub fn read_matches<R: Read>(mut input: R) -> Result<MatchSet, IoError> {
    let mut header = [0u8; HEADER_LEN];
    if read_full(&mut input, &mut header)? < HEADER_LEN {
        return Err(IoError::Truncated("header".into()));
    }
    if &header[..8] != MAGIC {
        return Err(IoError::Invalid("not a match file (bad magic)".into()));
    }
    let version = u32_at(&header, 2);
    if version != VERSION {
        return Err(IoError::Invalid(format!("unsupported match file version {version}")));
    }
    let mut set = MatchSet::new(u32_at(&header, 3));
    let mut last: Option<(u32, u32)> = None;
    loop {
        let mut block = [0u8; 12];
        let got = read_full(&mut input, &mut block)?;
        if got == 0 {
            break;
        }
        if got < block.len() {
            let after = last.map_or("the header".to_string(), |(i, j)| format!("pair ({i}, {j})"));
            return Err(IoError::Truncated(format!("pair header after {after}")));
        }
        let (i, j, count) = (u32_at(&block, 0), u32_at(&block, 1), u32_at(&block, 2) as usize);
        if i >= j || j >= set.image_count {
            return Err(IoError::Invalid(format!(
                "pair ({i}, {j}) is not an ordered pair of images below {}",
                set.image_count
            )));
        }
        if last.is_some_and(|p| p >= (i, j)) {
            return Err(IoError::Invalid(format!("pair ({i}, {j}) out of order or repeated")));
        }
        let mut body = vec![0u8; count * ENTRY_LEN];
        if read_full(&mut input, &mut body)? < body.len() {
            return Err(IoError::Truncated(format!("matches of pair ({i}, {j})")));
        }
        let ms = body
            .chunks_exact(ENTRY_LEN)
            .map(|e| FeatureMatch {
                fi: u32_at(e, 0),
                fj: u32_at(e, 1),
                pi: Vector2::new(f32_at(e, 2), f32_at(e, 3)),
                pj: Vector2::new(f32_at(e, 4), f32_at(e, 5)),
            })
            .collect();
        set.pairs.insert((i, j), ms);
        last = Some((i, j));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng) -> MatchSet {
        let n = rng.random_range(2..30u32);
        let mut set = MatchSet::new(n);
        for _ in 0..rng.random_range(0..20) {
            let i = rng.random_range(0..n - 1);
            let j = rng.random_range(i + 1..n);
            let ms = (0..rng.random_range(0..50))
                .map(|_| {
                    let p: [f32; 4] = std::array::from_fn(|_| rng.random_range(-10.0f32..5000.0));
                    FeatureMatch {
                        fi: rng.random(),
                        fj: rng.random(),
                        pi: Vector2::new(p[0] as f64, p[1] as f64),
                        pj: Vector2::new(p[2] as f64, p[3] as f64),
                    }
                })
                .collect();
            set.pairs.insert((i, j), ms);
        }
        set
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let set = random_set(&mut rng);
            let mut a = Vec::new();
            write_matches(&mut a, &set).unwrap();
            let back = read_matches(&a[..]).unwrap();
            assert_eq!(back, set);
            let mut b = Vec::new();
            write_matches(&mut b, &back).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_set_is_header_only() {
        let mut buf = Vec::new();
        write_matches(&mut buf, &MatchSet::new(7)).unwrap();
        assert_eq!(buf.len(), HEADER_LEN);
        assert_eq!(read_matches(&buf[..]).unwrap(), MatchSet::new(7));
    }

    #[test]
    fn truncation_names_the_pair() {
        let mut set = MatchSet::new(5);
        let m = FeatureMatch {
            fi: 1,
            fj: 2,
            pi: Vector2::new(1.0, 2.0),
            pj: Vector2::new(3.0, 4.0),
        };
        set.pairs.insert((0, 1), vec![m; 3]);
        set.pairs.insert((2, 4), vec![m; 2]);
        let mut buf = Vec::new();
        write_matches(&mut buf, &set).unwrap();
        match read_matches(&buf[..buf.len() - 5]) {
            Err(IoError::Truncated(what)) => assert!(what.contains("(2, 4)"), "{what}"),
            other => panic!("{other:?}"),
        }
        match read_matches(&buf[..HEADER_LEN + 12 + 3 * ENTRY_LEN + 4]) {
            Err(IoError::Truncated(what)) => assert!(what.contains("(0, 1)"), "{what}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_matches(&buf[..10]), Err(IoError::Truncated(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_matches(&bad[..]), Err(IoError::Invalid(_))));
    }
}
