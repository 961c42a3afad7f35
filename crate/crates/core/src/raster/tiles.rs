use crate::camera::ScreenSplat;
use crate::real::{lit, Real};

pub const DEFAULT_TILE_SIZE: usize = 16;
/// Splat support radius in standard deviations.
pub const SUPPORT_SIGMA: f64 = 3.0;

/// Axis-aligned bounds `[x_lo, x_hi, y_lo, y_hi]` of a splat's 3σ ellipse.
pub fn splat_bounds<T: Real>(s: &ScreenSplat<T>) -> [T; 4] {
    let k: T = lit(SUPPORT_SIGMA);
    let rx = k * s.cov2d.xx.sqrt();
    let ry = k * s.cov2d.yy.sqrt();
    [
        s.center_px[0] - rx,
        s.center_px[0] + rx,
        s.center_px[1] - ry,
        s.center_px[1] + ry,
    ]
}

/// Per-tile lists of splat indices, front to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn tile(&self, tx: usize, ty: usize) -> &[u32] {
        &self.lists[ty * self.tiles_x + tx]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// Assigns every projected splat to each tile its bounding box overlaps.
///
/// `splats[i]` is `None` for culled surfels. Tile lists are sorted by camera
/// depth, ties broken by index.
pub fn tile_bin<T: Real>(
    splats: &[Option<ScreenSplat<T>>],
    width: usize,
    height: usize,
    tile_size: usize,
) -> TileBins {
    assert!(tile_size > 0);
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut order: Vec<u32> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|_| i as u32))
        .collect();
    order.sort_by(|&a, &b| {
        let da = splats[a as usize].as_ref().unwrap().cam_depth;
        let db = splats[b as usize].as_ref().unwrap().cam_depth;
        da.partial_cmp(&db)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let ts = tile_size as f64;
    for &i in &order {
        let s = splats[i as usize].as_ref().unwrap();
        let [x0, x1, y0, y1] = splat_bounds(s).map(|v| v.as_f64());
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
            continue;
        }
        // tile range whose open interval (t*ts, (t+1)*ts) meets [lo, hi]
        let range = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
            let first = (lo / ts).floor().max(0.0);
            let last = ((hi / ts).ceil() - 1.0).min(n as f64 - 1.0);
            if hi <= 0.0 || first > last {
                return None;
            }
            Some((first as usize, last as usize))
        };
        let (Some((tx0, tx1)), Some((ty0, ty1))) = (range(x0, x1, tiles_x), range(y0, y1, tiles_y))
        else {
            continue;
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(i);
            }
        }
    }
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        lists,
    }
}
