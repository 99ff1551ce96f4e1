//! Hard block-structured pruning: zero whole segments by an l2-norm
//! threshold or by a sparsity target, and track the resulting masks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{Axis, Matrix};
use crate::regularizer::{group_norms, make_partition, BlockPartition};

/// Keep/drop decision per segment of a [`BlockPartition`].
///
/// Stored per segment, so the element mask is block-structured by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    pub partition: BlockPartition,
    pub layer_name: String,
    /// `groups * blocks_per_group` flags, index `group * blocks_per_group + block`.
    kept: Vec<bool>,
}

impl PruneMask {
    pub fn full(partition: BlockPartition) -> Self {
        let n = partition.num_segments();
        PruneMask {
            layer_name: partition.layer_name.clone(),
            partition,
            kept: vec![true; n],
        }
    }

    /// Mask with exactly the listed `(group, block)` segments dropped.
    pub fn from_zeroed(partition: BlockPartition, zeroed: &[(usize, usize)]) -> Result<Self> {
        let mut mask = PruneMask::full(partition);
        for &(g, b) in zeroed {
            if g >= mask.partition.groups || b >= mask.partition.blocks_per_group {
                return Err(Error::OutOfRange(format!(
                    "segment ({g}, {b}) outside {} groups x {} blocks",
                    mask.partition.groups, mask.partition.blocks_per_group
                )));
            }
            let idx = mask.seg(g, b);
            mask.kept[idx] = false;
        }
        Ok(mask)
    }

    fn seg(&self, g: usize, b: usize) -> usize {
        g * self.partition.blocks_per_group + b
    }

    pub fn rows(&self) -> usize {
        self.partition.rows
    }

    pub fn cols(&self) -> usize {
        self.partition.cols
    }

    pub fn segment_kept(&self, group: usize, block: usize) -> bool {
        self.kept[self.seg(group, block)]
    }

    pub fn is_kept(&self, i: usize, j: usize) -> bool {
        let (g, b) = self.partition.segment_of(i, j);
        self.segment_kept(g, b)
    }

    /// Dropped segments in `(group, block)` lexicographic order.
    pub fn zeroed_segments(&self) -> Vec<(usize, usize)> {
        let k = self.partition.blocks_per_group;
        self.kept
            .iter()
            .enumerate()
            .filter(|(_, &kept)| !kept)
            .map(|(idx, _)| (idx / k, idx % k))
            .collect()
    }

    /// Kept segments in `(group, block)` lexicographic order.
    pub fn retained_segments(&self) -> Vec<(usize, usize)> {
        let k = self.partition.blocks_per_group;
        self.kept
            .iter()
            .enumerate()
            .filter(|(_, &kept)| kept)
            .map(|(idx, _)| (idx / k, idx % k))
            .collect()
    }

    pub fn total_entries(&self) -> usize {
        self.partition.rows * self.partition.cols
    }

    pub fn retained_entries(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count() * self.partition.block_width
    }

    /// Fraction of zero bits.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.retained_entries() as f64 / self.total_entries() as f64
    }

    /// The element mask as a 0/1 matrix.
    pub fn bits(&self) -> Matrix {
        Matrix::from_fn(self.rows(), self.cols(), |i, j| if self.is_kept(i, j) { 1.0 } else { 0.0 })
    }

    /// `w ⊙ mask`.
    pub fn apply(&self, w: &Matrix) -> Result<Matrix> {
        let mut out = w.clone();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, w: &mut Matrix) -> Result<()> {
        self.partition.check(w, "mask")?;
        for (g, b) in self.zeroed_segments() {
            for (i, j) in self.partition.segment_entries(g, b) {
                w[(i, j)] = 0.0;
            }
        }
        Ok(())
    }
}

/// Total entries over retained entries.
pub fn compression_rate(mask: &PruneMask) -> Result<f64> {
    let kept = mask.retained_entries();
    if kept == 0 {
        return Err(Error::DegenerateMask);
    }
    Ok(mask.total_entries() as f64 / kept as f64)
}

/// Zeroes every segment whose l2 norm is `<= threshold`.
pub fn prune_threshold(w: &Matrix, part: &BlockPartition, threshold: f64) -> Result<(Matrix, PruneMask)> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
    }
    let norms = group_norms(w, part)?;
    let k = part.blocks_per_group;
    let zeroed: Vec<(usize, usize)> = norms
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &n)| n <= threshold)
        .map(|(idx, _)| (idx / k, idx % k))
        .collect();
    let mask = PruneMask::from_zeroed(part.clone(), &zeroed)?;
    Ok((mask.apply(w)?, mask))
}

/// Number of segments a sparsity target removes: `floor(target * total)`.
/// The small slack absorbs products like `0.29 * 100 = 28.999...`.
pub fn segments_to_prune(target_sparsity: f64, total: usize) -> usize {
    ((target_sparsity * total as f64) + 1e-9).floor() as usize
}

/// Zeroes the `floor(target * segments)` segments of smallest norm. Equal
/// norms are ordered by `(group, block)`.
pub fn prune_percentile(w: &Matrix, part: &BlockPartition, target_sparsity: f64) -> Result<(Matrix, PruneMask)> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::InvalidArgument(format!(
            "target sparsity must lie in [0, 1), got {target_sparsity}"
        )));
    }
    let norms = group_norms(w, part)?;
    let mut order: Vec<usize> = (0..norms.len()).collect();
    // stable sort keeps (group, block) order among equal norms
    order.sort_by(|&a, &b| norms.as_slice()[a].total_cmp(&norms.as_slice()[b]));
    let k = part.blocks_per_group;
    let count = segments_to_prune(target_sparsity, norms.len());
    let zeroed: Vec<(usize, usize)> = order[..count].iter().map(|&idx| (idx / k, idx % k)).collect();
    let mask = PruneMask::from_zeroed(part.clone(), &zeroed)?;
    Ok((mask.apply(w)?, mask))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneMode {
    Threshold(f64),
    Percentile(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneEntry {
    pub layer: String,
    pub axis: Axis,
    pub num_blocks: usize,
    pub mode: PruneMode,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneSpec {
    pub entries: Vec<PruneEntry>,
}

impl PruneSpec {
    /// The same percentile target on every listed layer.
    pub fn uniform(layers: &[String], axis: Axis, num_blocks: usize, sparsity: f64) -> Self {
        PruneSpec {
            entries: layers
                .iter()
                .map(|l| PruneEntry {
                    layer: l.clone(),
                    axis,
                    num_blocks,
                    mode: PruneMode::Percentile(sparsity),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            match e.mode {
                PruneMode::Threshold(t) if !(t >= 0.0) => {
                    return Err(Error::InvalidArgument(format!("layer `{}`: threshold {t} < 0", e.layer)))
                }
                PruneMode::Percentile(s) if !(0.0..1.0).contains(&s) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer `{}`: target sparsity {s} outside [0, 1)",
                        e.layer
                    )))
                }
                _ => {}
            }
            if self.entries[..i].iter().any(|o| o.layer == e.layer) {
                return Err(Error::InvalidArgument(format!("layer `{}` listed twice", e.layer)));
            }
        }
        Ok(())
    }
}

/// Per-layer masks in parameter order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskSet {
    pub masks: Vec<PruneMask>,
}

impl MaskSet {
    pub fn get(&self, layer: &str) -> Option<&PruneMask> {
        self.masks.iter().find(|m| m.layer_name == layer)
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }
}

/// Applies `spec` to `params` in place and returns the masks.
pub fn prune_model(params: &mut ModelParams, spec: &PruneSpec) -> Result<MaskSet> {
    spec.validate()?;
    let mut planned = Vec::with_capacity(spec.entries.len());
    for e in &spec.entries {
        let idx = params.index_of(&e.layer)?;
        if !params.tensors[idx].prunable {
            return Err(Error::NotPrunable(e.layer.clone()));
        }
        let w = &params.tensors[idx].matrix;
        let part = make_partition(w.rows(), w.cols(), e.axis, e.num_blocks)?.named(e.layer.clone());
        planned.push((idx, part, e.mode));
    }
    planned.sort_by_key(|(idx, _, _)| *idx);
    let mut masks = Vec::with_capacity(planned.len());
    for (idx, part, mode) in planned {
        let w = &params.tensors[idx].matrix;
        let (pruned, mask) = match mode {
            PruneMode::Threshold(t) => prune_threshold(w, &part, t)?,
            PruneMode::Percentile(s) => prune_percentile(w, &part, s)?,
        };
        params.tensors[idx].matrix = pruned;
        masks.push(mask);
    }
    Ok(MaskSet { masks })
}

/// Compression accounting for a whole model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelCompression {
    /// Over prunable tensors only.
    pub prunable_rate: f64,
    pub prunable_sparsity: f64,
    /// Over every weight matrix, embeddings and classifier included.
    pub all_rate: f64,
    pub all_sparsity: f64,
}

/// Rates implied by `masks`. Prunable tensors without a mask count as dense.
pub fn model_compression(params: &ModelParams, masks: &MaskSet) -> Result<ModelCompression> {
    let (mut prunable_total, mut prunable_kept, mut all_total, mut all_kept) = (0usize, 0usize, 0usize, 0usize);
    for m in &masks.masks {
        let t = params.get(&m.layer_name)?;
        if t.matrix.shape() != m.partition.shape() {
            return Err(Error::MaskMismatch(format!(
                "mask for `{}` is {} but the tensor is {}",
                m.layer_name,
                m.partition.shape(),
                t.matrix.shape()
            )));
        }
    }
    for t in &params.tensors {
        let total = t.matrix.len();
        let kept = masks.get(&t.name).map_or(total, PruneMask::retained_entries);
        all_total += total;
        all_kept += kept;
        if t.prunable {
            prunable_total += total;
            prunable_kept += kept;
        }
    }
    if prunable_kept == 0 || all_kept == 0 {
        return Err(Error::DegenerateMask);
    }
    Ok(ModelCompression {
        prunable_rate: prunable_total as f64 / prunable_kept as f64,
        prunable_sparsity: 1.0 - prunable_kept as f64 / prunable_total as f64,
        all_rate: all_total as f64 / all_kept as f64,
        all_sparsity: 1.0 - all_kept as f64 / all_total as f64,
    })
}

/// Writes masks as text:
///
/// ```text
/// # blockprune masks
/// layer <name> rows <r> cols <c> axis <row|column> num_blocks <k> zeroed <n>
/// <group> <block>        (n lines, sorted)
/// ```
pub fn save_masks(path: &Path, masks: &MaskSet) -> Result<()> {
    let mut out = String::from("# blockprune masks\n");
    for m in &masks.masks {
        let zeroed = m.zeroed_segments();
        let p = &m.partition;
        writeln!(
            out,
            "layer {} rows {} cols {} axis {} num_blocks {} zeroed {}",
            m.layer_name,
            p.rows,
            p.cols,
            p.axis,
            p.blocks_per_group,
            zeroed.len()
        )
        .expect("write to String");
        for (g, b) in zeroed {
            writeln!(out, "{g} {b}").expect("write to String");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_masks(path: &Path) -> Result<MaskSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut masks = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        let bad = |n: usize, msg: &str| Error::format(path, n, msg);
        let f: Vec<&str> = line.split_whitespace().collect();
        let keys = ["layer", "rows", "cols", "axis", "num_blocks", "zeroed"];
        if f.len() != 12 || (0..6).any(|i| f[2 * i] != keys[i]) {
            return Err(bad(lineno, "expected `layer <name> rows <r> cols <c> axis <a> num_blocks <k> zeroed <n>`"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(lineno, &format!("`{s}` is not a count")));
        let (rows, cols, k, n) = (num(f[3])?, num(f[5])?, num(f[9])?, num(f[11])?);
        let axis = Axis::parse(f[7]).ok_or_else(|| bad(lineno, "axis must be row or column"))?;
        let part = make_partition(rows, cols, axis, k)
            .map_err(|e| bad(lineno, &e.to_string()))?
            .named(f[1]);
        let mut zeroed = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, pair) = lines.next().ok_or_else(|| bad(lineno, "truncated segment list"))?;
            let mut it = pair.split_whitespace().map(|s| s.parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(g)), Some(Ok(b)), None) => zeroed.push((g, b)),
                _ => return Err(bad(ln, "expected `<group> <block>`")),
            }
        }
        if zeroed.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad(lineno, "segment list must be strictly increasing"));
        }
        masks.push(PruneMask::from_zeroed(part, &zeroed).map_err(|e| bad(lineno, &e.to_string()))?);
    }
    Ok(MaskSet { masks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random_partitioned(seed: u64, rows: usize, cols: usize, axis: Axis, k: usize) -> (Matrix, BlockPartition) {
        let mut rng = Rng::new(seed);
        (Matrix::random_normal(rows, cols, 1.0, &mut rng), make_partition(rows, cols, axis, k).unwrap())
    }

    #[test]
    fn threshold_examples() {
        let (w, p) = random_partitioned(1, 6, 6, Axis::Row, 3);
        let (pruned, mask) = prune_threshold(&w, &p, 0.0).unwrap();
        assert_eq!(pruned, w);
        assert_eq!(mask.sparsity(), 0.0);

        let max = group_norms(&w, &p).unwrap().max_abs();
        let (pruned, mask) = prune_threshold(&w, &p, max).unwrap();
        assert_eq!(pruned, Matrix::zeros(6, 6));
        assert_eq!(mask.sparsity(), 1.0);
        assert!(matches!(compression_rate(&mask), Err(Error::DegenerateMask)));

        let w = Matrix::from_rows(&[[3.0, 4.0, 0.0, 1.0]]);
        let p = make_partition(1, 4, Axis::Row, 2).unwrap();
        let (pruned, _) = prune_threshold(&w, &p, 2.0).unwrap();
        assert_eq!(pruned.as_slice(), &[3.0, 4.0, 0.0, 0.0]);
        assert!(prune_threshold(&w, &p, -1.0).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let w = Matrix::from_rows(&[[3.0, 4.0, 1.0, 0.0]]);
        let p = make_partition(1, 4, Axis::Row, 2).unwrap();
        let (_, mask) = prune_threshold(&w, &p, 1.0).unwrap();
        assert_eq!(mask.zeroed_segments(), vec![(0, 1)]);
    }

    #[test]
    fn percentile_examples() {
        let (w, p) = random_partitioned(2, 8, 8, Axis::Row, 2);
        let (pruned, mask) = prune_percentile(&w, &p, 0.0).unwrap();
        assert_eq!(pruned, w);
        assert!(mask.zeroed_segments().is_empty());

        let (pruned, mask) = prune_percentile(&w, &p, 0.5).unwrap();
        assert_eq!(mask.zeroed_segments().len(), 8);
        assert_eq!(pruned.count_zeros(), 32);
        assert_eq!(compression_rate(&mask).unwrap(), 2.0);
        assert!(prune_percentile(&w, &p, 1.0).is_err());
    }

    #[test]
    fn percentile_ties_break_by_position() {
        let w = Matrix::filled(4, 4, 1.0);
        let p = make_partition(4, 4, Axis::Row, 2).unwrap();
        let (_, mask) = prune_percentile(&w, &p, 0.5).unwrap();
        assert_eq!(mask.zeroed_segments(), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn compression_rate_examples() {
        let p = make_partition(10, 10, Axis::Row, 10).unwrap();
        for (zeroed, expect) in [(30usize, 1.0 / 0.7), (50, 2.0), (80, 5.0)] {
            let segs: Vec<(usize, usize)> = (0..zeroed).map(|i| (i / 10, i % 10)).collect();
            let mask = PruneMask::from_zeroed(p.clone(), &segs).unwrap();
            let rate = compression_rate(&mask).unwrap();
            assert!((rate - expect).abs() < 1e-12);
            assert!((rate - 1.0 / (1.0 - mask.sparsity())).abs() < 1e-12);
        }
    }

    #[test]
    fn column_axis_masks_are_column_segments() {
        let (w, p) = random_partitioned(3, 6, 4, Axis::Column, 2);
        let (pruned, mask) = prune_percentile(&w, &p, 0.5).unwrap();
        for (g, b) in mask.zeroed_segments() {
            for i in b * 3..b * 3 + 3 {
                assert_eq!(pruned[(i, g)], 0.0);
            }
        }
        assert_eq!(pruned.count_zeros(), 12);
    }

    #[test]
    fn prune_model_behaviour() {
        let mut params = build_model(ModelConfig::default(), &mut Rng::new(4)).unwrap();
        let before = params.clone();
        let masks = prune_model(&mut params, &PruneSpec::default()).unwrap();
        assert!(masks.is_empty());
        assert_eq!(params, before);

        let spec = PruneSpec::uniform(&params.prunable_names(), Axis::Row, 4, 0.5);
        let masks = prune_model(&mut params, &spec).unwrap();
        let c = model_compression(&params, &masks).unwrap();
        assert_eq!(c.prunable_rate, 2.0);
        assert!(c.all_rate < 2.0 && c.all_rate > 1.0);

        let mut params = before.clone();
        let targets = [("wq", 0.25), ("ffn_in", 0.5), ("ffn_out", 0.75)];
        let spec = PruneSpec {
            entries: targets
                .iter()
                .map(|&(l, s)| PruneEntry {
                    layer: l.into(),
                    axis: Axis::Column,
                    num_blocks: 4,
                    mode: PruneMode::Percentile(s),
                })
                .collect(),
        };
        let masks = prune_model(&mut params, &spec).unwrap();
        for (l, s) in targets {
            let m = masks.get(l).unwrap();
            assert_eq!(m.sparsity(), s);
            let w = &params.get(l).unwrap().matrix;
            assert_eq!(w.count_zeros() as f64 / w.len() as f64, s);
        }
    }

    #[test]
    fn prune_model_rejects_bad_layers() {
        let mut params = build_model(ModelConfig::default(), &mut Rng::new(4)).unwrap();
        let spec = |l: &str| PruneSpec::uniform(&[l.to_string()], Axis::Row, 4, 0.5);
        assert!(matches!(prune_model(&mut params, &spec("embedding")), Err(Error::NotPrunable(_))));
        assert!(matches!(prune_model(&mut params, &spec("nope")), Err(Error::UnknownLayer(_))));
        params.set_prunable("embedding", true).unwrap();
        assert!(prune_model(&mut params, &spec("embedding")).is_ok());
    }

    #[test]
    fn masks_round_trip_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = build_model(ModelConfig::default(), &mut Rng::new(5)).unwrap();
        let mut spec = PruneSpec::uniform(&params.prunable_names(), Axis::Row, 8, 0.3);
        spec.entries[2].axis = Axis::Column;
        let masks = prune_model(&mut params, &spec).unwrap();
        let path = dir.path().join("masks.txt");
        save_masks(&path, &masks).unwrap();
        assert_eq!(load_masks(&path).unwrap(), masks);

        fs::write(&path, "layer wq rows 16 cols 16 axis row num_blocks 4 zeroed 2\n0 1\n").unwrap();
        let err = load_masks(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }

    /// Independent percentile oracle: full sort of (norm, group, block) tuples.
    fn oracle_zeroed(w: &Matrix, p: &BlockPartition, count: usize) -> Vec<(usize, usize)> {
        let mut all = Vec::new();
        for g in 0..p.groups {
            for b in 0..p.blocks_per_group {
                let sq: f64 = p.segment_entries(g, b).map(|(i, j)| w[(i, j)] * w[(i, j)]).sum();
                all.push((sq.sqrt(), g, b));
            }
        }
        all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut out: Vec<(usize, usize)> = all[..count].iter().map(|&(_, g, b)| (g, b)).collect();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn percentile_matches_sort_oracle(seed in 0u64..10_000, pct in 0usize..100, axis_row in any::<bool>()) {
            let axis = if axis_row { Axis::Row } else { Axis::Column };
            let (w, p) = random_partitioned(seed, 12, 12, axis, 4);
            let s = pct as f64 / 100.0;
            let (pruned, mask) = prune_percentile(&w, &p, s).unwrap();
            let count = pct * p.num_segments() / 100;
            prop_assert_eq!(mask.zeroed_segments(), oracle_zeroed(&w, &p, count));
            prop_assert_eq!(pruned, w.hadamard(&mask.bits()).unwrap());
        }

        #[test]
        fn pruning_is_idempotent(seed in 0u64..10_000, pct in 0usize..100) {
            let (w, p) = random_partitioned(seed, 8, 12, Axis::Row, 3);
            let s = pct as f64 / 100.0;
            let (once, m1) = prune_percentile(&w, &p, s).unwrap();
            let (twice, m2) = prune_percentile(&once, &p, s).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(m1, m2);
            let (t1, _) = prune_threshold(&w, &p, 1.0).unwrap();
            let (t2, _) = prune_threshold(&t1, &p, 1.0).unwrap();
            prop_assert_eq!(t1, t2);
        }

        #[test]
        fn threshold_at_cut_matches_percentile(seed in 0u64..10_000, pct in 1usize..100) {
            let (w, p) = random_partitioned(seed, 8, 8, Axis::Row, 4);
            let norms = group_norms(&w, &p).unwrap();
            let mut sorted = norms.as_slice().to_vec();
            sorted.sort_by(f64::total_cmp);
            let count = pct * p.num_segments() / 100;
            prop_assume!(count > 0);
            let (_, by_pct) = prune_percentile(&w, &p, pct as f64 / 100.0).unwrap();
            let (_, by_thr) = prune_threshold(&w, &p, sorted[count - 1]).unwrap();
            prop_assert_eq!(by_pct, by_thr);
        }

        #[test]
        fn masked_norms_match(seed in 0u64..10_000) {
            let (w, p) = random_partitioned(seed, 6, 6, Axis::Column, 3);
            let (pruned, mask) = prune_percentile(&w, &p, 0.5).unwrap();
            let via_mask = group_norms(&w.hadamard(&mask.bits()).unwrap(), &p).unwrap();
            prop_assert_eq!(group_norms(&pruned, &p).unwrap(), via_mask);
        }
    }
}
