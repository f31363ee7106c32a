//! Offline oracle classifier: label of the cosine-nearest support example.

use crate::geometry::{cosine_distance, GeometryError};
use crate::trial::ClassLabel;

/// Returns `(position, label, distance)` of the nearest support embedding.
/// Ties go to the lower position.
pub fn nearest_support<'a, I>(query: &[f32], support: I) -> Result<(usize, ClassLabel, f64), GeometryError>
where
    I: IntoIterator<Item = (ClassLabel, &'a [f32])>,
{
    let mut best: Option<(usize, ClassLabel, f64)> = None;
    for (pos, (label, emb)) in support.into_iter().enumerate() {
        let d = cosine_distance(query, emb)?;
        if best.is_none_or(|(_, _, bd)| d < bd) {
            best = Some((pos, label, d));
        }
    }
    best.ok_or(GeometryError::Empty)
}
