//! Heightmap storage and queries.
//!
//! A [`TerrainGrid`] is a regular row-major grid of elevation samples with
//! bilinear interpolation between nodes. It is immutable after construction,
//! so shared references are safe across rollout workers. Synthetic terrain
//! for tests and desk-scale experiments comes from [`generate_terrain`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Vec3};

const DEM_MAGIC: &[u8; 9] = b"TFTA-DEM1";

/// Regular heightmap. Node `(col i, row j)` sits at world coordinates
/// `(origin_x + i*cell_size, origin_y + j*cell_size)`; `heights` holds
/// `n_rows * n_cols` elevations in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    heights: Vec<f64>,
}

impl TerrainGrid {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_cols: usize,
        n_rows: usize,
        heights: Vec<f64>,
    ) -> Result<Self> {
        if n_cols < 2 || n_rows < 2 {
            return Err(Error::Config(format!(
                "terrain grid must be at least 2x2, got {n_cols}x{n_rows}"
            )));
        }
        if cell_size <= 0.0 || !cell_size.is_finite() {
            return Err(Error::Config(format!("cell_size must be > 0, got {cell_size}")));
        }
        if heights.len() != n_cols * n_rows {
            return Err(Error::Config(format!(
                "expected {} height samples, got {}",
                n_cols * n_rows,
                heights.len()
            )));
        }
        if !heights.iter().all(|h| h.is_finite()) {
            return Err(Error::Config("terrain heights must all be finite".into()));
        }
        Ok(Self { origin_x, origin_y, cell_size, n_cols, n_rows, heights })
    }

    /// Height sample stored at node `(col, row)`.
    pub fn sample(&self, col: usize, row: usize) -> f64 {
        self.heights[row * self.n_cols + col]
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// World-space extent covered by the node rectangle:
    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y,
            self.origin_x + (self.n_cols - 1) as f64 * self.cell_size,
            self.origin_y + (self.n_rows - 1) as f64 * self.cell_size,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.bounds();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Bilinearly interpolated elevation at `(x, y)`. Exact at grid nodes.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64> {
        if !self.contains(x, y) {
            return Err(Error::OutOfMap(x, y));
        }
        let gx = (x - self.origin_x) / self.cell_size;
        let gy = (y - self.origin_y) / self.cell_size;
        let i0 = (gx.floor() as usize).min(self.n_cols - 2);
        let j0 = (gy.floor() as usize).min(self.n_rows - 2);
        let fx = gx - i0 as f64;
        let fy = gy - j0 as f64;
        let h00 = self.sample(i0, j0);
        let h10 = self.sample(i0 + 1, j0);
        let h01 = self.sample(i0, j0 + 1);
        let h11 = self.sample(i0 + 1, j0 + 1);
        Ok((1.0 - fy) * ((1.0 - fx) * h00 + fx * h10) + fy * ((1.0 - fx) * h01 + fx * h11))
    }

    /// Altitude above ground level at `position`. Negative means below the
    /// surface; callers treat that as a crash, never clamp it away.
    pub fn agl(&self, position: &Vec3) -> Result<f64> {
        Ok(position.z - self.height_at(position.x, position.y)?)
    }

    /// Writes the self-describing binary format: magic `TFTA-DEM1`, then
    /// little-endian `u32 n_cols, u32 n_rows, f64 origin_x, origin_y,
    /// cell_size`, then `n_rows * n_cols` `f32` heights row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DEM_MAGIC)?;
        w.write_u32::<LittleEndian>(self.n_cols as u32)?;
        w.write_u32::<LittleEndian>(self.n_rows as u32)?;
        w.write_f64::<LittleEndian>(self.origin_x)?;
        w.write_f64::<LittleEndian>(self.origin_y)?;
        w.write_f64::<LittleEndian>(self.cell_size)?;
        for h in &self.heights {
            w.write_f32::<LittleEndian>(*h as f32)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)?;
        if &magic != DEM_MAGIC {
            return Err(Error::Format("bad DEM magic".into()));
        }
        let n_cols = r.read_u32::<LittleEndian>()? as usize;
        let n_rows = r.read_u32::<LittleEndian>()? as usize;
        let origin_x = r.read_f64::<LittleEndian>()?;
        let origin_y = r.read_f64::<LittleEndian>()?;
        let cell_size = r.read_f64::<LittleEndian>()?;
        let n = n_cols
            .checked_mul(n_rows)
            .ok_or_else(|| Error::Format("DEM dimensions overflow".into()))?;
        let mut heights = Vec::with_capacity(n);
        for _ in 0..n {
            heights.push(r.read_f32::<LittleEndian>()? as f64);
        }
        Self::new(origin_x, origin_y, cell_size, n_cols, n_rows, heights)
    }

    /// Text fixture format: header `ncols nrows origin_x origin_y cellsize`
    /// on the first line, then whitespace-separated heights.
    fn read_text<R: BufRead>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty DEM text file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "DEM text header needs 5 fields (ncols nrows origin_x origin_y cellsize), got {}",
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Format(format!("bad DEM header field '{s}'")))
        };
        let n_cols = parse(fields[0])? as usize;
        let n_rows = parse(fields[1])? as usize;
        let origin_x = parse(fields[2])?;
        let origin_y = parse(fields[3])?;
        let cell_size = parse(fields[4])?;
        let mut heights = Vec::with_capacity(n_cols * n_rows);
        for line in lines {
            for tok in line.split_whitespace() {
                heights.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad height value '{tok}'")))?,
                );
            }
        }
        Self::new(origin_x, origin_y, cell_size, n_cols, n_rows, heights)
    }

    /// Loads either format, sniffing for the binary magic.
    pub fn load(path: &Path) -> Result<Self> {
        let mut f = BufReader::new(File::open(path)?);
        let buf = f.fill_buf()?;
        if buf.len() >= DEM_MAGIC.len() && &buf[..DEM_MAGIC.len()] == DEM_MAGIC {
            Self::read_binary(f)
        } else {
            Self::read_text(f)
        }
    }
}

/// Deterministic synthetic terrain: a sum of seeded Gaussian hills and
/// valleys rescaled so the peak-to-trough span equals `relief` (minimum
/// elevation 0). Identical seeds produce bit-identical grids.
pub fn generate_terrain(
    seed: u64,
    n_cols: usize,
    n_rows: usize,
    cell_size: f64,
    relief: f64,
) -> Result<TerrainGrid> {
    if relief < 0.0 {
        return Err(Error::Config(format!("relief must be >= 0, got {relief}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (n_cols.max(2) - 1) as f64 * cell_size;
    let depth = (n_rows.max(2) - 1) as f64 * cell_size;
    let extent = width.min(depth);

    const N_BUMPS: usize = 24;
    let mut bumps = Vec::with_capacity(N_BUMPS);
    for _ in 0..N_BUMPS {
        let cx = rng.random_range(0.0..=width);
        let cy = rng.random_range(0.0..=depth);
        let sigma = rng.random_range(0.08..0.25) * extent;
        let amp = rng.random_range(0.3..1.0) * if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
        bumps.push((cx, cy, sigma, amp));
    }

    let mut heights = vec![0.0f64; n_cols * n_rows];
    for j in 0..n_rows {
        let y = j as f64 * cell_size;
        for i in 0..n_cols {
            let x = i as f64 * cell_size;
            let mut h = 0.0;
            for &(cx, cy, sigma, amp) in &bumps {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                h += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            heights[j * n_cols + i] = h;
        }
    }

    let min = heights.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > min { relief / (max - min) } else { 0.0 };
    for h in &mut heights {
        *h = (*h - min) * scale;
    }

    TerrainGrid::new(0.0, 0.0, cell_size, n_cols, n_rows, heights)
}
