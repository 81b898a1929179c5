use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams, one per concern, so that changing one noise
/// source never reshuffles another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Terrain = 1,
    Landmarks = 2,
    Nav = 3,
    NavDrift = 4,
    Pixel = 5,
    Dropout = 6,
    Outlier = 7,
    Ransac = 8,
    Registration = 9,
}

/// Counter-based generator: the key is the seed, the ChaCha stream id
/// encodes `(concern, index)`. Results do not depend on evaluation order.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) ^ index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a: u64 = stream_rng(9, Stream::Pixel, 3).random();
        let b: u64 = stream_rng(9, Stream::Pixel, 3).random();
        let c: u64 = stream_rng(9, Stream::Pixel, 4).random();
        let d: u64 = stream_rng(9, Stream::Outlier, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
