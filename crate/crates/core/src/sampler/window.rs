use super::{round_half_away, SampleError};
use crate::volume::LabelVolume;

pub const WINDOW_SIDE: usize = 5;
pub const WINDOW_LEN: usize = WINDOW_SIDE * WINDOW_SIDE * WINDOW_SIDE;
/// Per-axis mm offsets of the 5×5×5 target window (2 mm steps, 10 mm cube).
pub const WINDOW_OFFSETS_MM: [f64; WINDOW_SIDE] = [-4.0, -2.0, 0.0, 2.0, 4.0];

/// 5×5×5 labels in z, y, x order (x fastest).
pub type LabelWindow = [u8; WINDOW_LEN];

/// Labels at the window offsets around `q`; positions outside the volume
/// are background.
pub fn sample_label_window(l: &LabelVolume, q: [usize; 3]) -> Result<LabelWindow, SampleError> {
    let dims = l.dims();
    if !l.contains(q) {
        return Err(SampleError::QueryOutside { query: q, dims });
    }
    let s = l.spacing();
    let coords: [[Option<usize>; WINDOW_SIDE]; 3] = std::array::from_fn(|a| {
        WINDOW_OFFSETS_MM.map(|mm| {
            let c = q[a] as i64 + round_half_away(mm / s[a]);
            (c >= 0 && (c as usize) < dims[a]).then_some(c as usize)
        })
    });
    let mut out = [0u8; WINDOW_LEN];
    let mut k = 0;
    for z in coords[2] {
        for y in coords[1] {
            for x in coords[0] {
                if let (Some(x), Some(y), Some(z)) = (x, y, z) {
                    out[k] = l.get(x, y, z);
                }
                k += 1;
            }
        }
    }
    Ok(out)
}
