use alloc::vec::Vec;

use super::normalize::normalize_channel;
use super::{RenderConfig, RenderError};
use crate::trial::EegTrial;

/// One channel's trace in image coordinates (x right, y down).
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub channel: usize,
    pub points: Vec<(f64, f64)>,
}

/// Maps every sample to image coordinates.
///
/// `x = t * (width - 1) / (T - 1)` and
/// `y = delta / 2 + alpha * norm(x[c][t]) + delta * c`.
pub fn layout_trial(trial: &EegTrial, config: &RenderConfig) -> Result<Vec<Polyline>, RenderError> {
    config.validate()?;
    config.check_fits(trial.channels())?;
    let len = trial.samples.len();
    let x_step = if len > 1 {
        (config.width_px as f64 - 1.0) / (len as f64 - 1.0)
    } else {
        0.0
    };
    let margin = config.top_margin();
    Ok(trial
        .samples
        .rows()
        .enumerate()
        .map(|(c, row)| {
            let offset = margin + config.delta * c as f64;
            let points = normalize_channel(row, config.normalizer)
                .into_iter()
                .enumerate()
                .map(|(t, v)| (t as f64 * x_step, config.alpha * v + offset))
                .collect();
            Polyline { channel: c, points }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Normalizer;
    use crate::trial::{ClassLabel, Samples};
    use alloc::string::String;
    use alloc::vec;

    fn trial(rows: &[Vec<f32>]) -> EegTrial {
        let names: Vec<String> = (0..rows.len()).map(|c| alloc::format!("c{c}")).collect();
        EegTrial::new("s", 0, Samples::from_rows(rows).unwrap(), 250.0, names, ClassLabel(0)).unwrap()
    }

    fn config() -> RenderConfig {
        RenderConfig {
            delta: 100.0,
            height_px: 600,
            ..RenderConfig::default()
        }
    }

    #[test]
    fn median_sample_sits_on_baseline() {
        let t = trial(&[vec![1.0, 2.0, 3.0], vec![0.0; 3], vec![0.0; 3], vec![1.0, 2.0, 3.0]]);
        let lines = layout_trial(&t, &config()).unwrap();
        assert!((lines[0].points[1].1 - 50.0).abs() < 1e-9);
        // Same value on channel 3 sits exactly 3 * delta lower.
        assert_eq!(lines[3].points[1].1 - lines[0].points[1].1, 300.0);
    }

    #[test]
    fn identical_channels_differ_by_delta() {
        let w = vec![0.5, -3.0, 2.0, 7.0, 1.0];
        let t = trial(&[w.clone(), w]);
        let lines = layout_trial(&t, &config()).unwrap();
        for (a, b) in lines[0].points.iter().zip(&lines[1].points) {
            assert_eq!(a.0, b.0);
            assert_eq!(b.1 - a.1, 100.0);
        }
    }

    #[test]
    fn time_spans_width() {
        let t = trial(&[vec![0.0; 5]]);
        let lines = layout_trial(&t, &config()).unwrap();
        assert_eq!(lines[0].points[0].0, 0.0);
        assert_eq!(lines[0].points[4].0, 895.0);
    }

    #[test]
    fn alpha_scales_residuals() {
        let t = trial(&[vec![1.0, 4.0, -2.0, 0.5], vec![3.0, 3.5, 9.0, -1.0]]);
        let mut cfg = config();
        cfg.normalizer = Normalizer::None;
        let a = layout_trial(&t, &cfg).unwrap();
        cfg.alpha *= 2.0;
        let b = layout_trial(&t, &cfg).unwrap();
        for (la, lb) in a.iter().zip(&b) {
            let off = cfg.top_margin() + cfg.delta * la.channel as f64;
            for (pa, pb) in la.points.iter().zip(&lb.points) {
                assert!((pb.1 - off - 2.0 * (pa.1 - off)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn too_many_channels_for_height() {
        let t = trial(&vec![vec![0.0; 2]; 6]);
        let mut cfg = config();
        cfg.height_px = 650;
        assert!(matches!(layout_trial(&t, &cfg), Err(RenderError::TooShort { .. })));
        cfg.height_px = 700;
        assert!(layout_trial(&t, &cfg).is_ok());
    }
}
