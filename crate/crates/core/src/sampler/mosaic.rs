use super::{Descriptor, CUBE_SIDE, GRID_COUNT, GRID_SAMPLES, LOCAL_GRID, PLANE_SIDE};

/// Side of the square mosaic: three 27-pixel tiles.
pub const MOSAIC_SIDE: usize = 3 * PLANE_SIDE;

/// 81×81 grayscale rendering of a descriptor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub pixels: Vec<f32>,
}

impl Mosaic {
    pub fn width(&self) -> usize {
        MOSAIC_SIDE
    }

    pub fn height(&self) -> usize {
        MOSAIC_SIDE
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * MOSAIC_SIDE + col]
    }

    /// Binary PGM (P5, maxval 255), values mapped linearly from `[0, 1]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", MOSAIC_SIDE, MOSAIC_SIDE).into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }
}

/// Pixel position (row, col) inside a 27×27 tile of value `i` of grid `g`.
pub(crate) fn tile_position(g: usize, i: usize) -> (usize, usize) {
    if g < LOCAL_GRID {
        (i / PLANE_SIDE, i % PLANE_SIDE)
    } else {
        // cube: z-slice z goes to sub-tile (z / 3, z % 3)
        let z = i / (CUBE_SIDE * CUBE_SIDE);
        let y = (i / CUBE_SIDE) % CUBE_SIDE;
        let x = i % CUBE_SIDE;
        ((z / 3) * CUBE_SIDE + y, (z % 3) * CUBE_SIDE + x)
    }
}

/// Lays the nine grids out as a 3×3 arrangement of 27×27 tiles in grid
/// order. Planes are drawn directly; each cube shows its nine z-slices
/// arranged 3×3 inside its tile.
pub fn descriptor_to_mosaic(d: &Descriptor) -> Mosaic {
    let mut pixels = vec![0.0; MOSAIC_SIDE * MOSAIC_SIDE];
    for g in 0..GRID_COUNT {
        let (tr, tc) = (g / 3 * PLANE_SIDE, g % 3 * PLANE_SIDE);
        for (i, &v) in d.block(g).iter().enumerate().take(GRID_SAMPLES) {
            let (r, c) = tile_position(g, i);
            pixels[(tr + r) * MOSAIC_SIDE + tc + c] = v;
        }
    }
    Mosaic { pixels }
}
