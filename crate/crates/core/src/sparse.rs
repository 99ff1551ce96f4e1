//! Sparse storage formats, their storage cost in scalar slots, and
//! sparse x dense multiplication kernels.
//!
//! Storage is counted in scalar slots: one value or one index costs one
//! slot. Under that unit a 50%-sparse 8x8 matrix costs 96 slots in COO
//! (3 per nonzero) and 48 in the block-structured format when the
//! retained segments are 4 wide (32 values + 2 index slots for each of the
//! 8 retained segments).

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::binio::{decode_f64s, write_f64s};
use crate::error::{Error, Result};
use crate::numerics::{matmul, Axis, Matrix, Rng};
use crate::pruner::{prune_percentile, segments_to_prune, PruneMask};
use crate::regularizer::{make_partition, BlockPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub format: &'static str,
    pub value_units: usize,
    pub index_units: usize,
    pub total_units: usize,
}

impl StorageReport {
    fn new(format: &'static str, value_units: usize, index_units: usize) -> Self {
        StorageReport {
            format,
            value_units,
            index_units,
            total_units: value_units + index_units,
        }
    }
}

impl fmt::Display for StorageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} total={} values={} index={}",
            self.format, self.total_units, self.value_units, self.index_units
        )
    }
}

pub trait StorageCost {
    fn storage_cost(&self) -> StorageReport;
}

impl StorageCost for Matrix {
    fn storage_cost(&self) -> StorageReport {
        StorageReport::new("dense", self.len(), 0)
    }
}

/// Coordinate format: one `(row, col, value)` triple per nonzero, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub triples: Vec<(usize, usize, f64)>,
}

pub fn to_coo(w: &Matrix) -> CooMatrix {
    let mut triples = Vec::new();
    for i in 0..w.rows() {
        for (j, &x) in w.row(i).iter().enumerate() {
            if x != 0.0 {
                triples.push((i, j, x));
            }
        }
    }
    CooMatrix {
        rows: w.rows(),
        cols: w.cols(),
        triples,
    }
}

impl CooMatrix {
    pub fn nnz(&self) -> usize {
        self.triples.len()
    }

    pub fn densify(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for &(i, j, x) in &self.triples {
            out[(i, j)] = x;
        }
        out
    }
}

impl StorageCost for CooMatrix {
    fn storage_cost(&self) -> StorageReport {
        StorageReport::new("coo", self.nnz(), 2 * self.nnz())
    }
}

/// Retained segments of a block-partitioned matrix.
///
/// `values` holds `block_width` scalars per retained segment, in the order
/// of `retained`, each run laid out along the segment (left to right for
/// row segments, top to bottom for column segments). A column-axis matrix
/// is thus the row-axis format of its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructuredMatrix {
    pub partition: BlockPartition,
    /// Sorted, unique `(group, block)` pairs.
    pub retained: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

/// Packs the segments `mask` keeps. Fails if `w` has nonzeros the mask drops.
pub fn to_block_structured(w: &Matrix, mask: &PruneMask) -> Result<BlockStructuredMatrix> {
    let part = &mask.partition;
    part.check(w, "to_block_structured")?;
    for (g, b) in mask.zeroed_segments() {
        if let Some((i, j)) = part.segment_entries(g, b).find(|&(i, j)| w[(i, j)] != 0.0) {
            return Err(Error::MaskMismatch(format!(
                "entry ({i}, {j}) = {} lies in dropped segment ({g}, {b})",
                w[(i, j)]
            )));
        }
    }
    let retained = mask.retained_segments();
    let mut values = Vec::with_capacity(retained.len() * part.block_width);
    for &(g, b) in &retained {
        values.extend(part.segment_entries(g, b).map(|(i, j)| w[(i, j)]));
    }
    Ok(BlockStructuredMatrix {
        partition: part.clone(),
        retained,
        values,
    })
}

impl BlockStructuredMatrix {
    pub fn rows(&self) -> usize {
        self.partition.rows
    }

    pub fn cols(&self) -> usize {
        self.partition.cols
    }

    pub fn segment_values(&self, idx: usize) -> &[f64] {
        let w = self.partition.block_width;
        &self.values[idx * w..(idx + 1) * w]
    }

    pub fn densify(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows(), self.cols());
        for (idx, &(g, b)) in self.retained.iter().enumerate() {
            for ((i, j), &x) in self.partition.segment_entries(g, b).zip(self.segment_values(idx)) {
                out[(i, j)] = x;
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let p = &self.partition;
        if self.retained.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("retained segments must be sorted and unique".into()));
        }
        if let Some(&(g, b)) = self.retained.iter().find(|&&(g, b)| g >= p.groups || b >= p.blocks_per_group) {
            return Err(Error::OutOfRange(format!("segment ({g}, {b})")));
        }
        if self.values.len() != self.retained.len() * p.block_width {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} segments of width {}",
                self.values.len(),
                self.retained.len(),
                p.block_width
            )));
        }
        Ok(())
    }
}

impl StorageCost for BlockStructuredMatrix {
    fn storage_cost(&self) -> StorageReport {
        let n = self.retained.len();
        StorageReport::new("block_structured", n * self.partition.block_width, 2 * n)
    }
}

/// `a * b` for a block-structured `a`.
///
/// Each output entry sums the nonzero products in ascending inner index,
/// which is the order [`matmul`] uses, so the result is bit-identical to
/// `matmul(&a.densify(), b)` for finite inputs.
pub fn spmm(a: &BlockStructuredMatrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "spmm",
            left: a.partition.shape(),
            right: b.shape(),
        });
    }
    let n = b.cols();
    let width = a.partition.block_width;
    let mut out = Matrix::zeros(a.rows(), n);
    let bs = b.as_slice();
    let os = out.as_mut_slice();
    match a.partition.axis {
        Axis::Row => {
            for (idx, &(g, blk)) in a.retained.iter().enumerate() {
                let out_row = &mut os[g * n..(g + 1) * n];
                for (t, &x) in a.segment_values(idx).iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let k = blk * width + t;
                    for (o, &y) in out_row.iter_mut().zip(&bs[k * n..(k + 1) * n]) {
                        *o += x * y;
                    }
                }
            }
        }
        Axis::Column => {
            for (idx, &(col, blk)) in a.retained.iter().enumerate() {
                let b_row = &bs[col * n..(col + 1) * n];
                for (t, &x) in a.segment_values(idx).iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let i = blk * width + t;
                    for (o, &y) in os[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                        *o += x * y;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reference COO x dense kernel.
pub fn coo_spmm(a: &CooMatrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "coo_spmm",
            left: crate::numerics::Shape {
                rows: a.rows,
                cols: a.cols,
            },
            right: b.shape(),
        });
    }
    let n = b.cols();
    let mut out = Matrix::zeros(a.rows, n);
    for &(i, k, x) in &a.triples {
        let b_row = &b.as_slice()[k * n..(k + 1) * n];
        for (o, &y) in out.row_mut(i).iter_mut().zip(b_row) {
            *o += x * y;
        }
    }
    Ok(out)
}

/// Whole-tile sparsity: entire `tile_rows x tile_cols` tiles are kept or
/// dropped. Storage-cost comparator only.
#[derive(Debug, Clone, PartialEq)]
pub struct WholeBlockMatrix {
    pub rows: usize,
    pub cols: usize,
    pub tile_rows: usize,
    pub tile_cols: usize,
    /// Sorted `(tile row, tile col)` pairs.
    pub retained: Vec<(usize, usize)>,
    /// Row-major tile contents, one tile after another.
    pub values: Vec<f64>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Drops the `floor(sparsity * tiles)` tiles of smallest Frobenius norm
/// (ties by tile position).
pub fn whole_block_prune(w: &Matrix, tile_rows: usize, tile_cols: usize, sparsity: f64) -> Result<WholeBlockMatrix> {
    if tile_rows == 0 || tile_cols == 0 || w.rows() % tile_rows != 0 || w.cols() % tile_cols != 0 {
        return Err(Error::InvalidArgument(format!(
            "{tile_rows}x{tile_cols} tiles do not divide a {} matrix",
            w.shape()
        )));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let (tr, tc) = (w.rows() / tile_rows, w.cols() / tile_cols);
    let tile_norm = |r: usize, c: usize| -> f64 {
        let mut s = 0.0;
        for i in r * tile_rows..(r + 1) * tile_rows {
            for j in c * tile_cols..(c + 1) * tile_cols {
                s += w[(i, j)] * w[(i, j)];
            }
        }
        s
    };
    let mut order: Vec<(f64, usize, usize)> = (0..tr)
        .flat_map(|r| (0..tc).map(move |c| (r, c)))
        .map(|(r, c)| (tile_norm(r, c), r, c))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let drop = segments_to_prune(sparsity, order.len());
    let mut retained: Vec<(usize, usize)> = order[drop..].iter().map(|&(_, r, c)| (r, c)).collect();
    retained.sort_unstable();
    let mut values = Vec::with_capacity(retained.len() * tile_rows * tile_cols);
    for &(r, c) in &retained {
        for i in r * tile_rows..(r + 1) * tile_rows {
            values.extend_from_slice(&w.row(i)[c * tile_cols..(c + 1) * tile_cols]);
        }
    }
    Ok(WholeBlockMatrix {
        rows: w.rows(),
        cols: w.cols(),
        tile_rows,
        tile_cols,
        retained,
        values,
    })
}

/// Tile shape used to compare against a block partition: segment-wide
/// along the partitioned axis, and as tall as the other extent allows.
pub fn comparator_tile(part: &BlockPartition) -> (usize, usize) {
    match part.axis {
        Axis::Row => (gcd(part.rows, part.block_width), part.block_width),
        Axis::Column => (part.block_width, gcd(part.cols, part.block_width)),
    }
}

impl WholeBlockMatrix {
    pub fn densify(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        let area = self.tile_rows * self.tile_cols;
        for (idx, &(r, c)) in self.retained.iter().enumerate() {
            let tile = &self.values[idx * area..(idx + 1) * area];
            for di in 0..self.tile_rows {
                for dj in 0..self.tile_cols {
                    out[(r * self.tile_rows + di, c * self.tile_cols + dj)] = tile[di * self.tile_cols + dj];
                }
            }
        }
        out
    }
}

impl StorageCost for WholeBlockMatrix {
    fn storage_cost(&self) -> StorageReport {
        let n = self.retained.len();
        StorageReport::new("whole_block", n * self.tile_rows * self.tile_cols, 2 * n)
    }
}

/// Writes a block-structured matrix:
///
/// ```text
/// <rows> <cols> <axis> <num_blocks> <retained_count>\n
/// <group> <block>\n            (retained_count lines)
/// <raw little-endian f64 values>
/// ```
pub fn save_block_structured(path: &Path, m: &BlockStructuredMatrix) -> Result<()> {
    let p = &m.partition;
    let mut bytes = format!(
        "{} {} {} {} {}\n",
        p.rows,
        p.cols,
        p.axis,
        p.blocks_per_group,
        m.retained.len()
    )
    .into_bytes();
    for (g, b) in &m.retained {
        bytes.extend_from_slice(format!("{g} {b}\n").as_bytes());
    }
    write_f64s(&mut bytes, &m.values)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_block_structured(path: &Path) -> Result<BlockStructuredMatrix> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut lineno = 0;
    let mut next_line = || -> Result<String> {
        lineno += 1;
        let end = bytes[pos..]
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::format(path, lineno, "unterminated text line"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::format(path, lineno, "header is not UTF-8"))?
            .to_string();
        pos += end + 1;
        Ok(line)
    };
    let header = next_line()?;
    let f: Vec<&str> = header.split_whitespace().collect();
    let bad = |line: usize, msg: &str| Error::format(path, line, msg);
    if f.len() != 5 {
        return Err(bad(1, "expected `<rows> <cols> <axis> <num_blocks> <retained_count>`"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(1, &format!("`{s}` is not a count")));
    let (rows, cols, k, count) = (num(f[0])?, num(f[1])?, num(f[3])?, num(f[4])?);
    let axis = Axis::parse(f[2]).ok_or_else(|| bad(1, "axis must be row or column"))?;
    let partition = make_partition(rows, cols, axis, k).map_err(|e| bad(1, &e.to_string()))?;
    let mut retained = Vec::with_capacity(count);
    for i in 0..count {
        let line = next_line()?;
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(g)), Some(Ok(b)), None) => retained.push((g, b)),
            _ => return Err(bad(i + 2, "expected `<group> <block>`")),
        }
    }
    drop(next_line);
    let values = decode_f64s(&bytes[pos..])
        .filter(|v| v.len() == count * partition.block_width)
        .ok_or_else(|| bad(count + 2, "value blob has the wrong length"))?;
    let m = BlockStructuredMatrix {
        partition,
        retained,
        values,
    };
    m.validate().map_err(|e| bad(1, &e.to_string()))?;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchFormat {
    Dense,
    BlockStructured,
    Coo,
}

impl BenchFormat {
    pub const ALL: [BenchFormat; 3] = [BenchFormat::Dense, BenchFormat::BlockStructured, BenchFormat::Coo];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchFormat::Dense => "dense",
            BenchFormat::BlockStructured => "block_structured",
            BenchFormat::Coo => "coo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub sparsity: f64,
    pub format: BenchFormat,
    pub median: Duration,
    /// Max abs deviation of this format's product from the dense one.
    pub max_abs_error: f64,
}

/// Segment width used by the benchmark for an `n x n` operand.
pub fn bench_block_width(n: usize) -> usize {
    (1..=16).rev().find(|w| n % w == 0).unwrap_or(1)
}

/// Deterministic benchmark operands: a row-axis block-pruned `n x n` matrix
/// and a dense `n x n` right-hand side.
pub fn bench_inputs(n: usize, sparsity: f64, seed: u64) -> Result<(Matrix, PruneMask, Matrix)> {
    let mut rng = Rng::new(seed ^ (n as u64).rotate_left(32));
    let w = Matrix::random_normal(n, n, 1.0, &mut rng);
    let part = make_partition(n, n, Axis::Row, n / bench_block_width(n))?;
    let (pruned, mask) = prune_percentile(&w, &part, sparsity)?;
    let b = Matrix::random_normal(n, n, 1.0, &mut rng);
    Ok((pruned, mask, b))
}

fn median(mut times: Vec<Duration>) -> Duration {
    times.sort_unstable();
    times[times.len() / 2]
}

/// Median wall-clock of dense, block-structured and COO products for every
/// `(size, sparsity)` pair.
pub fn bench_spmm(sizes: &[usize], sparsities: &[f64], repetitions: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 repetitions, got {repetitions}")));
    }
    let mut rows = Vec::new();
    for &n in sizes {
        for &s in sparsities {
            let (a, mask, b) = bench_inputs(n, s, seed)?;
            let bsm = to_block_structured(&a, &mask)?;
            let coo = to_coo(&a);
            let reference = matmul(&a, &b)?;
            for format in BenchFormat::ALL {
                let mut times = Vec::with_capacity(repetitions);
                let mut product = None;
                for _ in 0..repetitions {
                    let start = Instant::now();
                    let out = match format {
                        BenchFormat::Dense => matmul(&a, &b)?,
                        BenchFormat::BlockStructured => spmm(&bsm, &b)?,
                        BenchFormat::Coo => coo_spmm(&coo, &b)?,
                    };
                    times.push(start.elapsed());
                    product = Some(out);
                }
                let err = product.expect("repetitions >= 3").max_abs_diff(&reference)?;
                rows.push(BenchRow {
                    size: n,
                    sparsity: s,
                    format,
                    median: median(times),
                    max_abs_error: err,
                });
            }
        }
    }
    Ok(rows)
}

/// `size,sparsity,format,median_seconds,max_abs_error` with a header.
pub fn bench_table_csv(rows: &[BenchRow], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nsize,sparsity,format,median_seconds,max_abs_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.9},{:e}\n",
            r.size,
            r.sparsity,
            r.format.as_str(),
            r.median.as_secs_f64(),
            r.max_abs_error
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruner::PruneMask;
    use crate::numerics::Rng;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn half_sparse_8x8() -> (Matrix, PruneMask) {
        let mut rng = Rng::new(8);
        let w = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let part = make_partition(8, 8, Axis::Row, 2).unwrap();
        let (pruned, mask) = prune_percentile(&w, &part, 0.5).unwrap();
        (pruned, mask)
    }

    #[test]
    fn coo_examples() {
        assert!(to_coo(&Matrix::zeros(3, 3)).triples.is_empty());
        let c = to_coo(&Matrix::identity(3));
        assert_eq!(c.triples, vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
        let mut rng = Rng::new(1);
        let w = Matrix::random_normal(5, 7, 1.0, &mut rng).map(|x| if x.abs() < 0.5 { 0.0 } else { x });
        assert_eq!(to_coo(&w).densify(), w);
    }

    #[test]
    fn worked_storage_example() {
        let (pruned, mask) = half_sparse_8x8();
        let coo = to_coo(&pruned).storage_cost();
        let bsm = to_block_structured(&pruned, &mask).unwrap().storage_cost();
        assert_eq!((coo.value_units, coo.index_units, coo.total_units), (32, 64, 96));
        assert_eq!((bsm.value_units, bsm.index_units, bsm.total_units), (32, 16, 48));
        assert!(bsm.total_units < coo.total_units);
        let dense = pruned.storage_cost();
        assert_eq!((dense.value_units, dense.index_units), (64, 0));
        assert_eq!(bsm.to_string(), "block_structured total=48 values=32 index=16");
    }

    #[test]
    fn block_structured_edge_cases() {
        let mut rng = Rng::new(2);
        let w = Matrix::random_normal(4, 6, 1.0, &mut rng);
        let part = make_partition(4, 6, Axis::Row, 3).unwrap();
        let full = to_block_structured(&w, &PruneMask::full(part.clone())).unwrap();
        assert_eq!(full.retained.len(), 12);
        assert_eq!(full.values, w.as_slice());

        let all: Vec<(usize, usize)> = (0..4).flat_map(|g| (0..3).map(move |b| (g, b))).collect();
        let empty = PruneMask::from_zeroed(part.clone(), &all).unwrap();
        let e = to_block_structured(&Matrix::zeros(4, 6), &empty).unwrap();
        assert!(e.retained.is_empty() && e.values.is_empty());

        assert!(matches!(to_block_structured(&w, &empty), Err(Error::MaskMismatch(_))));
    }

    #[test]
    fn unpruned_costs_dense_plus_index() {
        let w = Matrix::filled(8, 8, 1.0);
        let part = make_partition(8, 8, Axis::Column, 4).unwrap();
        let bsm = to_block_structured(&w, &PruneMask::full(part)).unwrap().storage_cost();
        assert_eq!(bsm.value_units, w.storage_cost().total_units);
        assert_eq!(bsm.index_units, 2 * 32);
    }

    #[test]
    fn spmm_edge_cases() {
        let mut rng = Rng::new(3);
        let w = Matrix::random_normal(6, 6, 1.0, &mut rng);
        let b = Matrix::random_normal(6, 5, 1.0, &mut rng);
        for axis in [Axis::Row, Axis::Column] {
            let part = make_partition(6, 6, axis, 3).unwrap();
            let full = to_block_structured(&w, &PruneMask::full(part.clone())).unwrap();
            assert_eq!(spmm(&full, &b).unwrap(), matmul(&w, &b).unwrap());
            let all: Vec<(usize, usize)> = (0..6).flat_map(|g| (0..3).map(move |k| (g, k))).collect();
            let empty = to_block_structured(&Matrix::zeros(6, 6), &PruneMask::from_zeroed(part, &all).unwrap()).unwrap();
            assert_eq!(spmm(&empty, &b).unwrap(), Matrix::zeros(6, 5));
        }
        let part = make_partition(6, 6, Axis::Row, 3).unwrap();
        let full = to_block_structured(&w, &PruneMask::full(part)).unwrap();
        assert!(spmm(&full, &Matrix::zeros(5, 5)).is_err());
    }

    #[test]
    fn whole_block_comparator() {
        let (pruned, mask) = half_sparse_8x8();
        let (tr, tc) = comparator_tile(&mask.partition);
        assert_eq!((tr, tc), (4, 4));
        let wb = whole_block_prune(&pruned, tr, tc, 0.5).unwrap();
        assert_eq!(wb.retained.len(), 2);
        let cost = wb.storage_cost();
        assert_eq!((cost.value_units, cost.index_units, cost.total_units), (32, 4, 36));
        let dense = wb.densify();
        for &(r, c) in &wb.retained {
            for i in r * 4..r * 4 + 4 {
                for j in c * 4..c * 4 + 4 {
                    assert_eq!(dense[(i, j)], pruned[(i, j)]);
                }
            }
        }
        assert!(whole_block_prune(&pruned, 3, 4, 0.5).is_err());
    }

    #[test]
    fn block_file_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let (pruned, mask) = half_sparse_8x8();
        let m = to_block_structured(&pruned, &mask).unwrap();
        let path = dir.path().join("w.bsm");
        save_block_structured(&path, &m).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"8 8 row 2 8\n"));
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(load_block_structured(&path).is_err());
    }

    #[test]
    fn bench_shapes_and_rep_guard() {
        assert!(bench_spmm(&[16], &[0.5], 2, 1).is_err());
        let rows = bench_spmm(&[16, 32], &[0.0, 0.5], 3, 1).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 3);
        assert!(rows.iter().all(|r| r.max_abs_error == 0.0));
        let (a1, _, b1) = bench_inputs(32, 0.5, 9).unwrap();
        let (a2, _, b2) = bench_inputs(32, 0.5, 9).unwrap();
        assert_eq!((a1, b1), (a2, b2));
        assert_eq!(bench_block_width(1024), 16);
        assert_eq!(bench_block_width(24), 12);
    }

    proptest! {
        #[test]
        fn block_structured_round_trips(seed in 0u64..10_000, pct in 0usize..100, row in any::<bool>()) {
            let mut rng = Rng::new(seed);
            let w = Matrix::random_normal(12, 8, 1.0, &mut rng);
            let axis = if row { Axis::Row } else { Axis::Column };
            let part = make_partition(12, 8, axis, 4).unwrap();
            let (pruned, mask) = prune_percentile(&w, &part, pct as f64 / 100.0).unwrap();
            let bsm = to_block_structured(&pruned, &mask).unwrap();
            prop_assert_eq!(bsm.densify(), pruned.clone());
            let b = Matrix::random_normal(8, 5, 1.0, &mut rng);
            prop_assert_eq!(spmm(&bsm, &b).unwrap(), matmul(&pruned, &b).unwrap());
            prop_assert_eq!(coo_spmm(&to_coo(&pruned), &b).unwrap(), matmul(&pruned, &b).unwrap());
            let cost = bsm.storage_cost();
            prop_assert_eq!(cost.total_units, cost.value_units + cost.index_units);
        }
    }
}
