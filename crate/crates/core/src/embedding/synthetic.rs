//! Deterministic stand-in for the text and image encoders.
//!
//! Scheme, reproducible in any language:
//!
//! 1. Tokenize: lowercase, split on every non-alphanumeric character, drop
//!    empty pieces.
//! 2. Each token seeds a generator with the 64-bit FNV-1a hash of its UTF-8
//!    bytes (offset basis `0xcbf29ce484222325`, prime `0x100000001b3`). A zero
//!    hash is replaced by `0x9e3779b97f4a7c15`.
//! 3. The generator is xorshift64*: `x ^= x >> 12; x ^= x << 25; x ^= x >> 27;
//!    out = x * 0x2545f4914f6cdd1d` (wrapping). Component `i` of the token
//!    vector is `(out_i >> 11) · 2⁻⁵³ · 2 − 1`, giving uniform values in
//!    `[-1, 1)`.
//! 4. Token vectors are normalized individually, summed, and the sum is
//!    normalized.
//!
//! Frames embed the tokens of their label list (falling back to their id), so
//! a frame labelled `couch` has exactly the embedding of the text `couch`.

use crate::embedding::{check_query, Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::frame::FrameRecord;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct XorShift64Star(u64);

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        XorShift64Star(if seed == 0 { 0x9e37_79b9_7f4a_7c15 } else { seed })
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// Uniform in `[-1, 1)`.
    pub fn next_signed_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn token_vector(token: &str, d: usize) -> Vec<f64> {
    let mut rng = XorShift64Star::new(fnv1a64(token.as_bytes()));
    let v: Vec<f64> = (0..d).map(|_| rng.next_signed_unit()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Sum of per-token unit vectors, renormalized.
pub fn synthetic_scheme<S: AsRef<str>>(tokens: &[S], d: usize) -> Result<Embedding> {
    if d == 0 {
        return Err(Error::input("dimension must be positive"));
    }
    if tokens.is_empty() {
        return Err(Error::input("synthetic scheme needs at least one token"));
    }
    let mut acc = vec![0.0f64; d];
    for t in tokens {
        for (a, v) in acc.iter_mut().zip(token_vector(t.as_ref(), d)) {
            *a += v;
        }
    }
    Embedding::normalized(acc)
}

#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    d_clip: usize,
    d_rnr: usize,
}

impl SyntheticProvider {
    pub fn new(d_clip: usize, d_rnr: usize) -> Self {
        SyntheticProvider { d_clip, d_rnr }
    }
}

impl Default for SyntheticProvider {
    fn default() -> Self {
        SyntheticProvider::new(super::DEFAULT_D_CLIP, super::DEFAULT_D_RNR)
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn clip_dim(&self) -> usize {
        self.d_clip
    }

    fn rnr_dim(&self) -> usize {
        self.d_rnr
    }

    fn embed_text(&self, query: &str) -> Result<Embedding> {
        let tokens = tokenize(check_query(query)?);
        if tokens.is_empty() {
            return Err(Error::input(format!("query '{query}' has no tokens")));
        }
        synthetic_scheme(&tokens, self.d_clip)
    }

    fn embed_frame(&self, frame: &FrameRecord) -> Result<Embedding> {
        let mut tokens: Vec<String> = frame.labels.iter().flat_map(|l| tokenize(l)).collect();
        if tokens.is_empty() {
            tokens = tokenize(&frame.id);
        }
        if tokens.is_empty() {
            tokens.push(frame.id.clone());
        }
        synthetic_scheme(&tokens, self.d_clip)
    }

    fn embed_frame_rnr(&self, frame: &FrameRecord) -> Result<Option<Embedding>> {
        synthetic_scheme(&[format!("rnr:{}", frame.id)], self.d_rnr).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, DepthImage, RotoTranslation};

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn text_is_deterministic_and_self_similar() {
        let p = SyntheticProvider::default();
        let a = p.embed_text("couch").unwrap();
        let b = p.embed_text("couch").unwrap();
        assert_eq!(a.values(), b.values());
        assert!((a.cosine(&b) - 1.0).abs() < 1e-6);
        assert_eq!(a.dim(), 512);
    }

    #[test]
    fn unrelated_words_are_near_orthogonal() {
        let p = SyntheticProvider::default();
        let c = p.embed_text("couch").unwrap();
        let f = p.embed_text("floor").unwrap();
        assert!(c.cosine(&f).abs() < 0.3);
    }

    #[test]
    fn empty_inputs() {
        assert!(synthetic_scheme::<&str>(&[], 8).is_err());
        assert!(synthetic_scheme(&["a"], 0).is_err());
        let p = SyntheticProvider::default();
        assert!(p.embed_text("   ").is_err());
        assert!(p.embed_text(" ,, ").is_err());
    }

    #[test]
    fn repeated_tokens_keep_direction() {
        let one = synthetic_scheme(&["a"], 64).unwrap();
        let two = synthetic_scheme(&["a", "a"], 64).unwrap();
        for (x, y) in one.values().iter().zip(two.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let cp = synthetic_scheme(&["couch", "pillow"], 512).unwrap();
        let c = synthetic_scheme(&["couch"], 512).unwrap();
        let f = synthetic_scheme(&["floor"], 512).unwrap();
        assert!(cp.cosine(&c) > cp.cosine(&f));
    }

    #[test]
    fn labelled_frame_matches_text() {
        let p = SyntheticProvider::default();
        let intr = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 1,
            height: 1,
        };
        let rec = FrameRecord::new(
            "frame_0001",
            DepthImage::filled(1, 1, 1.0),
            intr,
            RotoTranslation::identity(),
        )
        .with_labels(["couch"]);
        assert_eq!(p.embed_frame(&rec).unwrap(), p.embed_text("couch").unwrap());
        let rnr = p.embed_frame_rnr(&rec).unwrap().unwrap();
        assert_eq!(rnr.dim(), 32);
        assert!((rnr.norm() - 1.0).abs() < 1e-6);
    }
}
