//! Grayscale rasters from map tables.
//!
//! A rendered image covers one horizontal slice: width is the first lattice
//! dimension (x, left to right), height the second (y, top row = largest
//! y). Magnitude maps to brightness inverted — darker pixels mean a higher
//! field magnitude — normalized per image, so a constant table renders
//! uniformly white. The optional certainty raster encodes the mean of the
//! per-component predictive standard deviations, min-max normalized and
//! inverted per image: 255 (white) at the smallest standard deviation in
//! the image, 0 (black) at the largest.

use magmap::data::MapTable;
use magmap::error::{Error, Result};

#[derive(Debug)]
pub struct Rendered {
    pub width: usize,
    pub height: usize,
    pub slice: usize,
    /// Binary graymap (P5) bytes.
    pub magnitude: Vec<u8>,
    pub certainty: Vec<u8>,
}

/// Min-max normalize to [0, 1]; a constant field maps to all zeros.
fn normalized(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

fn graymap(width: usize, height: usize, shade: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for row in 0..height {
        for col in 0..width {
            out.push(shade(col, row));
        }
    }
    out
}

/// Render the given vertical slice (node index in the third dimension).
/// Tables whose lattice already is a single slice need no index.
pub fn render_slice(table: &MapTable, slice: Option<usize>) -> Result<Rendered> {
    let counts = table.lattice.counts;
    let slice = match (counts[2], slice) {
        (1, None) => 0,
        (_, None) => {
            return Err(Error::Data(format!(
                "table has {} vertical slices; pick one with --slice",
                counts[2]
            )));
        }
        (n, Some(k)) if k >= n => {
            return Err(Error::Data(format!(
                "slice {k} out of range: table has {n} vertical slices"
            )));
        }
        (_, Some(k)) => k,
    };
    let (width, height) = (counts[0], counts[1]);
    let mut magnitude = Vec::with_capacity(width * height);
    let mut spread = Vec::with_capacity(width * height);
    for i2 in 0..height {
        for i1 in 0..width {
            let row = table.lattice.linear_index([i1, i2, slice]);
            magnitude.push(table.magnitude[row]);
            let var = table.variance_diag.row(row);
            spread.push((var[0].sqrt() + var[1].sqrt() + var[2].sqrt()) / 3.0);
        }
    }
    let magnitude = normalized(&magnitude);
    let spread = normalized(&spread);
    // Row 0 of the image is the largest y; both rasters share the layout.
    let index = |col: usize, row: usize| (height - 1 - row) * width + col;
    let to_byte = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    Ok(Rendered {
        width,
        height,
        slice,
        magnitude: graymap(width, height, |col, row| {
            to_byte(1.0 - magnitude[index(col, row)])
        }),
        certainty: graymap(width, height, |col, row| {
            to_byte(1.0 - spread[index(col, row)])
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use magmap::data::LatticeSpec;
    use ndarray::Array2;

    fn table(counts: [usize; 3], magnitude: Vec<f64>, variance: Vec<f64>) -> MapTable {
        let mut spec_bounds = [[0.0; 2]; 3];
        for d in 0..3 {
            spec_bounds[d] = if counts[d] == 1 {
                [0.0, 0.0]
            } else {
                [0.0, 1.0]
            };
        }
        let lattice = LatticeSpec::new(spec_bounds, counts).unwrap();
        let m = lattice.num_nodes();
        let means = Array2::zeros((m, 3));
        let variance_diag = Array2::from_shape_fn((m, 3), |(r, _)| variance[r]);
        MapTable::new(lattice, means, variance_diag, magnitude).unwrap()
    }

    fn pixels(pgm: &[u8]) -> (usize, usize, Vec<u8>) {
        let text = String::from_utf8_lossy(pgm);
        let mut parts = text.split_ascii_whitespace();
        assert_eq!(parts.next(), Some("P5"));
        let width: usize = parts.next().unwrap().parse().unwrap();
        let height: usize = parts.next().unwrap().parse().unwrap();
        assert_eq!(parts.next(), Some("255"));
        // Pixel data starts after the third header newline.
        let header_len = pgm
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == b'\n')
            .map(|(i, _)| i)
            .nth(2)
            .unwrap()
            + 1;
        (width, height, pgm[header_len..].to_vec())
    }

    #[test]
    fn image_dimensions_match_the_lattice() {
        let t = table([3, 2, 1], (0..6).map(|v| v as f64).collect(), vec![1.0; 6]);
        let rendered = render_slice(&t, None).unwrap();
        let (w, h, data) = pixels(&rendered.magnitude);
        assert_eq!((w, h), (3, 2));
        assert_eq!(data.len(), 6);
    }

    #[test]
    fn darker_means_higher_magnitude_and_north_is_up() {
        // Magnitude grows with y: the top image row must be darkest.
        let t = table([1, 3, 1], vec![0.0, 1.0, 2.0], vec![1.0; 3]);
        let rendered = render_slice(&t, None).unwrap();
        let (_, _, data) = pixels(&rendered.magnitude);
        // Rows top to bottom: y index 2 (mag 2), 1, 0.
        assert_eq!(data, vec![0, 128, 255]);
    }

    #[test]
    fn constant_table_renders_uniform_white() {
        let t = table([2, 2, 1], vec![7.5; 4], vec![0.25; 4]);
        let rendered = render_slice(&t, None).unwrap();
        let (_, _, mag) = pixels(&rendered.magnitude);
        assert_eq!(mag, vec![255; 4]);
        let (_, _, cert) = pixels(&rendered.certainty);
        assert_eq!(cert, vec![255; 4]);
    }

    #[test]
    fn certainty_spans_zero_variance_to_prior_level() {
        // Two-node table: one node at a nonzero variance (the prior level),
        // one at zero variance. Certainty must be 0 and 1 after per-image
        // normalization — black at the prior, white at zero variance.
        let prior = 0.36;
        let t = table([2, 1, 1], vec![1.0, 1.0], vec![prior, 0.0]);
        let rendered = render_slice(&t, None).unwrap();
        let (w, h, data) = pixels(&rendered.certainty);
        assert_eq!((w, h), (2, 1));
        assert_eq!(data, vec![0, 255]);
    }

    #[test]
    fn three_dimensional_tables_need_a_slice_index() {
        let t = table([2, 2, 2], (0..8).map(|v| v as f64).collect(), vec![1.0; 8]);
        let err = render_slice(&t, None).unwrap_err();
        assert!(err.to_string().contains("--slice"), "{err}");
        assert!(render_slice(&t, Some(2)).is_err());
        let rendered = render_slice(&t, Some(1)).unwrap();
        assert_eq!(rendered.slice, 1);
        let (w, h, data) = pixels(&rendered.magnitude);
        assert_eq!((w, h), (2, 2));
        // Slice 1 reads linear indices with i3 = 1.
        let expect: Vec<f64> = vec![
            t.magnitude[t.lattice.linear_index([0, 1, 1])],
            t.magnitude[t.lattice.linear_index([1, 1, 1])],
            t.magnitude[t.lattice.linear_index([0, 0, 1])],
            t.magnitude[t.lattice.linear_index([1, 0, 1])],
        ];
        let norm = normalized(&expect);
        let want: Vec<u8> = norm
            .iter()
            .map(|v| ((1.0 - v) * 255.0).round() as u8)
            .collect();
        assert_eq!(data, want);
    }
}
