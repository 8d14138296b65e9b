use super::Volume;

/// Lower end of the CT window (air).
pub const HU_MIN: f32 = -1024.0;
/// Upper end of the CT window.
pub const HU_MAX: f32 = 3071.0;

const HU_RANGE: f32 = HU_MAX - HU_MIN;

#[inline]
fn unit(hu: f32) -> f32 {
    if hu.is_nan() {
        return 0.0;
    }
    (hu.clamp(HU_MIN, HU_MAX) - HU_MIN) / HU_RANGE
}

/// Maps HU to `[0, 1]` by clamping to `[-1024, 3071]`. NaN maps to air (0.0).
pub fn normalize_intensity(v: &Volume) -> Volume {
    let data = v.data().iter().map(|&x| unit(x)).collect();
    Volume::new(v.dims(), v.spacing(), data).expect("geometry already validated")
}

/// Inverse of the normalization inside the clamp window.
pub fn hu_from_unit(u: f32) -> f32 {
    u * HU_RANGE + HU_MIN
}
