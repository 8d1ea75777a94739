//! Exact squared Euclidean distance transform (Meijster, Roerdink and
//! Hesselink), integer arithmetic throughout.

use crate::raster::BoundaryMap;

/// Squared distance from every pixel to the nearest set pixel of `map`, or
/// `None` when nothing is set.
pub fn squared_edt(map: &BoundaryMap) -> Option<Vec<u64>> {
    if map.is_empty() {
        return None;
    }
    let (w, h) = (map.width(), map.height());
    let bits = map.bits();
    let inf = (w + h) as i64;

    // Column pass: vertical distance to the nearest set pixel.
    let mut g = vec![0i64; w * h];
    for x in 0..w {
        g[x] = if bits[x] { 0 } else { inf };
        for y in 1..h {
            let i = y * w + x;
            g[i] = if bits[i] { 0 } else { g[i - w] + 1 };
        }
        for y in (0..h.saturating_sub(1)).rev() {
            let i = y * w + x;
            if g[i + w] < g[i] {
                g[i] = g[i + w] + 1;
            }
        }
    }

    // Row pass: lower envelope of parabolas.
    let mut out = vec![0u64; w * h];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: usize| {
            let d = x - i as i64;
            d * d + row[i] * row[i]
        };
        let sep = |i: usize, u: usize| {
            let (ii, uu) = (i as i64, u as i64);
            (uu * uu - ii * ii + row[u] * row[u] - row[i] * row[i]).div_euclid(2 * (uu - ii))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let wv = 1 + sep(s[q as usize], u);
                if wv < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = wv;
                }
            }
        }
        for u in (0..w).rev() {
            out[y * w + u] = f(u as i64, s[q as usize]) as u64;
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(map: &BoundaryMap) -> Vec<u64> {
        let pts: Vec<_> = map.set_pixels().collect();
        let mut out = Vec::new();
        for y in 0..map.height() {
            for x in 0..map.width() {
                let best = pts
                    .iter()
                    .map(|&(px, py)| {
                        let dx = px as i64 - x as i64;
                        let dy = py as i64 - y as i64;
                        (dx * dx + dy * dy) as u64
                    })
                    .min()
                    .unwrap();
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn empty_map_has_no_transform() {
        assert!(squared_edt(&BoundaryMap::empty(3, 3)).is_none());
    }

    #[test]
    fn corner_pixel() {
        let m = BoundaryMap::from_fn(3, 2, |x, y| x == 0 && y == 0);
        assert_eq!(squared_edt(&m).unwrap(), vec![0, 1, 4, 1, 2, 5]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(w in 1usize..14, h in 1usize..14, bits in prop::collection::vec(prop::bool::weighted(0.1), 196)) {
            let m = BoundaryMap::from_fn(w, h, |x, y| bits[y * 14 + x]);
            prop_assume!(!m.is_empty());
            prop_assert_eq!(squared_edt(&m).unwrap(), brute(&m));
        }
    }
}
