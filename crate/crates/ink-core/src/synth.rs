//! Deterministic generator of labeled, style-varied handwriting-like
//! corpora, so models can be trained and tested without real ink.
//!
//! Each author gets one style vector; each sample is a random word rendered
//! glyph by glyph from hand-authored polyline templates. Glyph prefixes are
//! deliberately ambiguous for the pairs b/d and c/e, which only diverge near
//! their final segment: a causal observer cannot resolve them until late in
//! the glyph, while a bidirectional one can.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Alphabet, Corpus, InkSample, StrokePoint};
use crate::error::{Error, Result};

/// Rendered glyph height in screen units before per-author scaling.
const BASE_SIZE: f64 = 20.0;
/// Extra advance, in glyph widths, inserted between words.
const WORD_GAP: f64 = 0.75;
/// Word lengths are drawn uniformly from this range.
const WORD_LEN_RANGE: std::ops::RangeInclusive<usize> = 1..=5;

/// Polyline template for one character, control points in the unit box
/// (x right, y down, baseline at y = 1).
#[derive(Debug, Clone)]
pub struct GlyphTemplate {
    pub ch: char,
    pub polyline: Vec<[f64; 2]>,
}

/// Per-author appearance parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleVector {
    /// Shear angle in radians.
    pub slant: f64,
    /// Overall size multiplier, > 0.
    pub scale: f64,
    /// Per-glyph advance in glyph widths.
    pub spacing: f64,
    /// Point noise amplitude, >= 0.
    pub jitter: f64,
    /// Baseline slope.
    pub drift: f64,
}

impl StyleVector {
    pub fn identity() -> Self {
        StyleVector { slant: 0.0, scale: 1.0, spacing: 1.2, jitter: 0.0, drift: 0.0 }
    }

    fn sample(rng: &mut impl Rng) -> Self {
        StyleVector {
            slant: rng.gen_range(-0.25..0.25),
            scale: rng.gen_range(0.8..1.25),
            spacing: rng.gen_range(1.1..1.4),
            jitter: rng.gen_range(0.005..0.02),
            drift: rng.gen_range(-0.05..0.05),
        }
    }
}

/// Templates for the toy alphabet "abcde".
pub fn glyph_template(ch: char) -> Option<GlyphTemplate> {
    let polyline: Vec<[f64; 2]> = match ch {
        // Loop plus right-hand stem.
        'a' => vec![
            [0.80, 0.40],
            [0.30, 0.25],
            [0.10, 0.60],
            [0.35, 0.95],
            [0.80, 0.70],
            [0.85, 1.00],
        ],
        // Tall bar, then a bowl that closes back onto the stem.
        'b' => vec![
            [0.20, 0.00],
            [0.20, 0.50],
            [0.20, 1.00],
            [0.65, 0.80],
            [0.65, 0.55],
            [0.20, 0.60],
        ],
        // Open arc.
        'c' => vec![
            [0.75, 0.30],
            [0.35, 0.20],
            [0.12, 0.60],
            [0.35, 0.98],
            [0.75, 0.85],
        ],
        // Same bar and bowl opening as 'b', but the final segment flicks
        // up-right instead of closing the bowl.
        'd' => vec![
            [0.20, 0.00],
            [0.20, 0.50],
            [0.20, 1.00],
            [0.65, 0.80],
            [0.65, 0.55],
            [0.80, 0.15],
        ],
        // Same arc as 'c' with a closing crossbar.
        'e' => vec![
            [0.75, 0.30],
            [0.35, 0.20],
            [0.12, 0.60],
            [0.35, 0.98],
            [0.75, 0.85],
            [0.70, 0.50],
            [0.15, 0.50],
        ],
        _ => return None,
    };
    Some(GlyphTemplate { ch, polyline })
}

/// Shear, scale, tilt, and jitter a polyline, in that order.
pub fn apply_style(polyline: &[[f64; 2]], style: &StyleVector, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    polyline
        .iter()
        .map(|&[x, y]| {
            let x1 = x + y * style.slant.tan();
            let (x2, y2) = (x1 * style.scale, y * style.scale);
            let y3 = y2 + style.drift * x2;
            let (jx, jy): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            [x2 + style.jitter * jx, y3 + style.jitter * jy]
        })
        .collect()
}

/// Uniform arc-length resampling to exactly `r` points.
pub fn resample_polyline(points: &[[f64; 2]], r: usize) -> Vec<[f64; 2]> {
    assert!(points.len() >= 2, "template needs at least two points");
    assert!(r >= 1);
    if r == 1 {
        return vec![points[0]];
    }
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    if total == 0.0 {
        return vec![points[0]; r];
    }
    let mut out = Vec::with_capacity(r);
    let mut seg = 0;
    for i in 0..r {
        let target = total * i as f64 / (r - 1) as f64;
        while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let frac = if span > 0.0 { (target - cumulative[seg]) / span } else { 0.0 };
        out.push([
            points[seg][0] + frac * (points[seg + 1][0] - points[seg][0]),
            points[seg][1] + frac * (points[seg + 1][1] - points[seg][1]),
        ]);
    }
    out
}

/// Render `text` (words separated by single spaces) in the given style.
/// Each glyph contributes exactly `points_per_glyph` points, pen-up on its
/// last point; labels index into `alphabet`.
pub fn synthesize_sample(
    alphabet: &Alphabet,
    style: &StyleVector,
    text: &str,
    points_per_glyph: usize,
    author: &str,
    rng: &mut impl Rng,
) -> Result<InkSample> {
    let mut points = Vec::new();
    let mut y = Vec::new();
    let mut eoc = Vec::new();
    let mut bow = Vec::new();

    // Assemble in unit-glyph space with unit advances, style the whole
    // sample at once, then blow up to screen units.
    let mut unit_points = Vec::new();
    let mut cursor = 0.0;
    let mut word_start = true;
    for ch in text.chars() {
        if ch == ' ' {
            cursor += WORD_GAP;
            word_start = true;
            continue;
        }
        let k = alphabet
            .index_of(ch)
            .ok_or_else(|| Error::data(format!("character {ch:?} not in alphabet")))?;
        let template =
            glyph_template(ch).ok_or_else(|| Error::data(format!("no glyph template for {ch:?}")))?;
        let resampled = resample_polyline(&template.polyline, points_per_glyph);
        for (i, p) in resampled.iter().enumerate() {
            unit_points.push([p[0] + cursor, p[1]]);
            y.push(k);
            eoc.push(if i + 1 == points_per_glyph { 1 } else { 0 });
            bow.push(if i == 0 && word_start { 1 } else { 0 });
        }
        cursor += style.spacing;
        word_start = false;
    }

    let styled = apply_style(&unit_points, style, rng);
    for (i, p) in styled.iter().enumerate() {
        points.push(StrokePoint {
            u: p[0] * BASE_SIZE,
            v: p[1] * BASE_SIZE,
            pen: eoc[i], // glyphs are disconnected: pen lifts with each eoc
        });
    }

    Ok(InkSample {
        points,
        y,
        eoc,
        bow,
        author: author.to_string(),
        text: text.to_string(),
        hard_split: false,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn derived_rng(seed: u64, author: u64, sample: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(author.wrapping_add(1)) ^ splitmix64(sample.wrapping_mul(0x5851f42d4c957f2d))))
}

/// Generate a corpus over `subset` with `authors` writers and
/// `samples_per_author` single-word samples each. Fully deterministic in
/// `seed`; each sample's randomness is split by index, so regeneration of
/// any sample is order-independent.
pub fn generate_corpus(
    subset: &str,
    authors: usize,
    samples_per_author: usize,
    points_per_glyph: usize,
    seed: u64,
) -> Result<Corpus> {
    if authors < 1 || samples_per_author < 1 || points_per_glyph < 1 {
        return Err(Error::contract("authors, samples, and points per glyph must be >= 1"));
    }
    let alphabet = Alphabet::new(subset)?;
    let full = Alphabet::full();
    let chars: Vec<char> = subset.chars().collect();
    for &c in &chars {
        if full.index_of(c).is_none() {
            return Err(Error::data(format!("character {c:?} not in the supported alphabet")));
        }
        if glyph_template(c).is_none() {
            return Err(Error::data(format!("no glyph template for {c:?}")));
        }
    }

    let mut samples = Vec::with_capacity(authors * samples_per_author);
    for a in 0..authors {
        let style = StyleVector::sample(&mut derived_rng(seed, a as u64, u64::MAX));
        let author = format!("author{a}");
        for s in 0..samples_per_author {
            let mut rng = derived_rng(seed, a as u64, s as u64);
            let len = rng.gen_range(WORD_LEN_RANGE);
            let word: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
            samples.push(synthesize_sample(
                &alphabet,
                &style,
                &word,
                points_per_glyph,
                &author,
                &mut rng,
            )?);
        }
    }
    Corpus::new(alphabet, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus_to_string;

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_corpus("abcde", 3, 4, 8, 42).unwrap();
        let b = generate_corpus("abcde", 3, 4, 8, 42).unwrap();
        assert_eq!(corpus_to_string(&a), corpus_to_string(&b));
        let c = generate_corpus("abcde", 3, 4, 8, 43).unwrap();
        assert_ne!(corpus_to_string(&a), corpus_to_string(&c));
    }

    #[test]
    fn label_construction_for_two_glyphs() {
        let alphabet = Alphabet::new("ab").unwrap();
        let style = StyleVector::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = synthesize_sample(&alphabet, &style, "ab", 8, "t", &mut rng).unwrap();
        assert_eq!(s.len(), 16);
        let eoc_at: Vec<usize> = s.eoc.iter().enumerate().filter(|(_, &e)| e == 1).map(|(i, _)| i).collect();
        assert_eq!(eoc_at, vec![7, 15]);
        let bow_at: Vec<usize> = s.bow.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect();
        assert_eq!(bow_at, vec![0]);
        assert_eq!(&s.y[..8], &[0; 8]);
        assert_eq!(&s.y[8..], &[1; 8]);
    }

    #[test]
    fn zero_jitter_repeats_exactly() {
        let alphabet = Alphabet::new("abc").unwrap();
        let style = StyleVector { jitter: 0.0, ..StyleVector::identity() };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a = synthesize_sample(&alphabet, &style, "cab", 6, "t", &mut r1).unwrap();
        let b = synthesize_sample(&alphabet, &style, "cab", 6, "t", &mut r2).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn identity_style_is_identity() {
        let poly = vec![[0.1, 0.2], [0.7, 0.9]];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = apply_style(&poly, &StyleVector { spacing: 1.0, ..StyleVector::identity() }, &mut rng);
        assert_eq!(out, poly);
    }

    #[test]
    fn scale_doubles_coordinates() {
        let poly = vec![[0.1, 0.2], [0.7, 0.9]];
        let style = StyleVector { scale: 2.0, ..StyleVector::identity() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = apply_style(&poly, &style, &mut rng);
        for (o, p) in out.iter().zip(poly.iter()) {
            assert!((o[0] - 2.0 * p[0]).abs() < 1e-15);
            assert!((o[1] - 2.0 * p[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn slant_is_a_shear() {
        let poly = vec![[0.3, 0.5], [0.9, 1.0]];
        let s = 0.2f64;
        let style = StyleVector { slant: s, ..StyleVector::identity() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = apply_style(&poly, &style, &mut rng);
        for (o, p) in out.iter().zip(poly.iter()) {
            assert!((o[0] - (p[0] + p[1] * s.tan())).abs() < 1e-15);
            assert!((o[1] - p[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn generated_corpora_validate_and_count_labels() {
        let corpus = generate_corpus("abcde", 4, 6, 10, 5).unwrap();
        assert_eq!(corpus.samples.len(), 24);
        for s in &corpus.samples {
            let chars = s.text.chars().filter(|&c| c != ' ').count();
            let words = s.text.split_whitespace().count();
            assert_eq!(s.eoc.iter().filter(|&&e| e == 1).count(), chars);
            assert_eq!(s.bow.iter().filter(|&&b| b == 1).count(), words);
            assert_eq!(s.len(), chars * 10);
        }
    }

    #[test]
    fn unknown_character_is_a_data_error() {
        assert!(generate_corpus("axz", 1, 1, 4, 0).is_err());
        let alphabet = Alphabet::new("ab").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = synthesize_sample(&alphabet, &StyleVector::identity(), "aq", 4, "t", &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn resampling_is_arc_length_uniform() {
        let poly = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        let r = resample_polyline(&poly, 5);
        assert_eq!(r.len(), 5);
        assert_eq!(r[0], [0.0, 0.0]);
        assert_eq!(r[4], [1.0, 1.0]);
        assert!((r[2][0] - 1.0).abs() < 1e-12 && r[2][1].abs() < 1e-12); // midpoint at the corner
        for w in r.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            assert!((d - 0.5).abs() < 1e-12);
        }
    }
}
