//! Channel color assignment.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// 8-bit RGB triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const WHITE: Rgb = Rgb(255, 255, 255);
    pub const BLACK: Rgb = Rgb(0, 0, 0);

    pub fn distance(self, other: Rgb) -> f64 {
        let d = |a: u8, b: u8| (a as f64 - b as f64) * (a as f64 - b as f64);
        libm::sqrt(d(self.0, other.0) + d(self.1, other.1) + d(self.2, other.2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PaletteMode {
    /// Neighbors far apart in RGB space, for the vision encoder.
    #[default]
    MachineSeparable,
    /// Fixed qualitative map, for human readers.
    HumanPerceptual,
}

/// The first three machine-separable colors.
pub const SEED_COLORS: [Rgb; 3] = [Rgb(0, 255, 255), Rgb(255, 0, 0), Rgb(122, 122, 122)];

/// Candidates stay at least this far from white so strokes never vanish
/// into the default background.
const MIN_BACKGROUND_DISTANCE: f64 = 120.0;

// matplotlib tab20
const QUALITATIVE: [Rgb; 20] = [
    Rgb(31, 119, 180),
    Rgb(174, 199, 232),
    Rgb(255, 127, 14),
    Rgb(255, 187, 120),
    Rgb(44, 160, 44),
    Rgb(152, 223, 138),
    Rgb(214, 39, 40),
    Rgb(255, 152, 150),
    Rgb(148, 103, 189),
    Rgb(197, 176, 213),
    Rgb(140, 86, 75),
    Rgb(196, 156, 148),
    Rgb(227, 119, 194),
    Rgb(247, 182, 210),
    Rgb(127, 127, 127),
    Rgb(199, 199, 199),
    Rgb(188, 189, 34),
    Rgb(219, 219, 141),
    Rgb(23, 190, 207),
    Rgb(158, 218, 229),
];

fn candidates() -> Vec<Rgb> {
    const LEVELS: [u8; 4] = [0, 85, 170, 255];
    let mut out = Vec::with_capacity(64);
    for r in LEVELS {
        for g in LEVELS {
            for b in LEVELS {
                let c = Rgb(r, g, b);
                if c.distance(Rgb::WHITE) >= MIN_BACKGROUND_DISTANCE {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// Deterministic palette of `channels` colors.
///
/// `MachineSeparable` starts from [`SEED_COLORS`] and then greedily picks,
/// from a 4-level RGB lattice, the unused color maximizing the smaller of its
/// distances to the two preceding channels (larger distance to the immediate
/// neighbor, then lattice order, break ties). Past the lattice size colors
/// repeat cyclically.
pub fn channel_palette(channels: usize, mode: PaletteMode) -> Vec<Rgb> {
    match mode {
        PaletteMode::HumanPerceptual => (0..channels).map(|i| QUALITATIVE[i % QUALITATIVE.len()]).collect(),
        PaletteMode::MachineSeparable => {
            let pool = candidates();
            let mut out: Vec<Rgb> = Vec::with_capacity(channels);
            for i in 0..channels {
                if i < SEED_COLORS.len() {
                    out.push(SEED_COLORS[i]);
                    continue;
                }
                let prev = out[i - 1];
                let prev2 = out[i - 2];
                let best = pool
                    .iter()
                    .copied()
                    .filter(|c| !out.contains(c))
                    .map(|c| {
                        let near = c.distance(prev);
                        (c, near.min(c.distance(prev2)), near)
                    })
                    .fold(None::<(Rgb, f64, f64)>, |best, cand| match best {
                        Some(b) if (b.1, b.2) >= (cand.1, cand.2) => Some(b),
                        _ => Some(cand),
                    });
                match best {
                    Some((c, _, _)) => out.push(c),
                    None => {
                        // Lattice exhausted: repeat the first `i` colors.
                        let cycle: Vec<Rgb> = (i..channels).map(|j| out[j % i]).collect();
                        out.extend(cycle);
                        break;
                    }
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn three_channels_use_seed_colors() {
        assert_eq!(
            channel_palette(3, PaletteMode::MachineSeparable),
            vec![Rgb(0, 255, 255), Rgb(255, 0, 0), Rgb(122, 122, 122)]
        );
    }

    #[test]
    fn single_channel_is_not_background() {
        for mode in [PaletteMode::MachineSeparable, PaletteMode::HumanPerceptual] {
            let p = channel_palette(1, mode);
            assert_eq!(p.len(), 1);
            assert_ne!(p[0], Rgb::WHITE);
        }
    }

    #[test]
    fn eighteen_channels_are_separable() {
        let p = channel_palette(18, PaletteMode::MachineSeparable);
        assert_eq!(p.len(), 18);
        for w in p.windows(2) {
            assert!(w[0].distance(w[1]) >= 100.0, "{:?} vs {:?}", w[0], w[1]);
        }
        for (i, a) in p.iter().enumerate() {
            assert!(p[i + 1..].iter().all(|b| b != a), "duplicate {a:?}");
        }
    }

    #[test]
    fn deterministic_in_count_and_mode() {
        assert_eq!(
            channel_palette(12, PaletteMode::MachineSeparable),
            channel_palette(12, PaletteMode::MachineSeparable)
        );
        assert_eq!(channel_palette(21, PaletteMode::HumanPerceptual)[20], QUALITATIVE[0]);
    }

    #[test]
    fn long_palettes_cycle_without_panicking() {
        let p = channel_palette(200, PaletteMode::MachineSeparable);
        assert_eq!(p.len(), 200);
        let first_repeat = (0..p.len()).find(|&i| p[..i].contains(&p[i])).unwrap();
        for j in first_repeat..p.len() {
            assert_eq!(p[j], p[j % first_repeat]);
        }
    }
}
