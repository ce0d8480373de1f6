//! Artificial label construction and training-pixel selection.
//!
//! Grid and stripe partitions place cell boundaries at `round(i * h / m)`, so
//! cells along one axis differ in size by at most one pixel. Labels enumerate
//! cells row-major starting at 1; background pixels are labeled too.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::hsdata::LabelMap;
use crate::tensor::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridSpec {
    /// `rows x cols` roughly equal cells (`k = rows * cols` classes).
    Divisions { rows: usize, cols: usize },
    /// Cells of about `height x width` pixels; the division counts are
    /// `ceil(h / height)` and `ceil(w / width)`.
    Blocks { height: usize, width: usize },
}

impl GridSpec {
    /// Division counts for an `h x w` image.
    pub fn divisions(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (m, n) = match *self {
            GridSpec::Divisions { rows, cols } => (rows, cols),
            GridSpec::Blocks { height, width } => {
                if height == 0 || width == 0 {
                    return Err(Error::param("grid block extents must be positive"));
                }
                (h.div_ceil(height), w.div_ceil(width))
            }
        };
        if m == 0 || n == 0 || m > h || n > w {
            return Err(Error::param(format!(
                "{m}x{n} grid does not fit a {h}x{w} image"
            )));
        }
        Ok((m, n))
    }
}

/// `round(i * extent / parts)` with halves rounded up.
fn boundary(i: usize, extent: usize, parts: usize) -> usize {
    (2 * i * extent + parts) / (2 * parts)
}

/// Cell index of every coordinate along one axis.
fn axis_cells(extent: usize, parts: usize) -> Vec<usize> {
    let mut cells = vec![0; extent];
    for i in 0..parts {
        for c in &mut cells[boundary(i, extent, parts)..boundary(i + 1, extent, parts)] {
            *c = i;
        }
    }
    cells
}

pub fn grid_partition(h: usize, w: usize, spec: GridSpec) -> Result<LabelMap> {
    if h == 0 || w == 0 {
        return Err(Error::dim("image extents must be positive"));
    }
    let (m, n) = spec.divisions(h, w)?;
    if m * n > u16::MAX as usize {
        return Err(Error::param(format!(
            "{} cells exceed the label range",
            m * n
        )));
    }
    let rows = axis_cells(h, m);
    let cols = axis_cells(w, n);
    Ok(LabelMap::from_fn(h, w, |r, c| {
        (rows[r] * n + cols[c] + 1) as u16
    }))
}

/// `s` vertical stripes; labels depend only on the column.
pub fn stripe_partition(h: usize, w: usize, stripes: usize) -> Result<LabelMap> {
    if stripes == 0 || stripes > w {
        return Err(Error::param(format!(
            "{stripes} stripes do not fit width {w}"
        )));
    }
    grid_partition(
        h,
        w,
        GridSpec::Divisions {
            rows: 1,
            cols: stripes,
        },
    )
}

/// Replaces each nonzero label by its group; 0 stays 0.
pub fn join_classes(gt: &LabelMap, grouping: &BTreeMap<u16, u16>) -> Result<LabelMap> {
    let mut labels = Vec::with_capacity(gt.labels().len());
    for &l in gt.labels() {
        if l == 0 {
            labels.push(0);
            continue;
        }
        match grouping.get(&l) {
            Some(&0) => {
                return Err(Error::Mapping(format!(
                    "label {l} mapped to background group 0"
                )))
            }
            Some(&g) => labels.push(g),
            None => return Err(Error::Mapping(format!("label {l} has no group"))),
        }
    }
    LabelMap::new(gt.height(), gt.width(), labels)
}

/// Parses `old=group` lines. Blank lines and `#` comments are skipped.
pub fn parse_grouping(text: &str) -> Result<BTreeMap<u16, u16>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<u16>()
                .map_err(|_| Error::Mapping(format!("line {}: bad label '{}'", n + 1, s.trim())))
        };
        let (old, group) = line
            .split_once('=')
            .ok_or_else(|| Error::Mapping(format!("line {}: expected old=group", n + 1)))?;
        if map.insert(parse(old)?, parse(group)?).is_some() {
            return Err(Error::Mapping(format!(
                "line {}: label {old} listed twice",
                n + 1
            )));
        }
    }
    Ok(map)
}

pub fn load_grouping(path: impl AsRef<Path>) -> Result<BTreeMap<u16, u16>> {
    parse_grouping(&fs::read_to_string(path)?)
}

/// Refines `gt` by `partition`: each non-empty (gt label, partition cell) pair
/// becomes its own class, numbered in first-occurrence scan order.
pub fn split_classes(gt: &LabelMap, partition: &LabelMap) -> Result<LabelMap> {
    split_classes_with_min(gt, partition, 1)
}

/// Like [`split_classes`]; fragments smaller than `min_pixels` fall back to
/// the unsplit fragment of the same gt class that appears first.
pub fn split_classes_with_min(
    gt: &LabelMap,
    partition: &LabelMap,
    min_pixels: usize,
) -> Result<LabelMap> {
    if gt.height() != partition.height() || gt.width() != partition.width() {
        return Err(Error::dim(format!(
            "gt {}x{} vs partition {}x{}",
            gt.height(),
            gt.width(),
            partition.height(),
            partition.width()
        )));
    }
    let mut sizes: HashMap<(u16, u16), usize> = HashMap::new();
    for (&g, &p) in gt.labels().iter().zip(partition.labels()) {
        if g != 0 {
            *sizes.entry((g, p)).or_default() += 1;
        }
    }
    // first large-enough fragment of each gt class absorbs its small fragments
    let mut ids: HashMap<(u16, u16), u16> = HashMap::new();
    let mut fallback: HashMap<u16, u16> = HashMap::new();
    let mut next = 1u16;
    let mut labels = Vec::with_capacity(gt.labels().len());
    for (&g, &p) in gt.labels().iter().zip(partition.labels()) {
        if g == 0 {
            labels.push(0);
            continue;
        }
        let key = if sizes[&(g, p)] >= min_pixels {
            (g, p)
        } else {
            (g, u16::MAX)
        };
        let id = match ids.get(&key) {
            Some(&id) => id,
            None if key.1 == u16::MAX && fallback.contains_key(&g) => fallback[&g],
            None => {
                let id = next;
                next = next
                    .checked_add(1)
                    .ok_or_else(|| Error::Mapping("too many split classes".into()))?;
                ids.insert(key, id);
                fallback.entry(g).or_insert(id);
                id
            }
        };
        labels.push(id);
    }
    LabelMap::new(gt.height(), gt.width(), labels)
}

/// Training pixels drawn per class; the rest of the labeled support is the
/// test set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSelection {
    pub seed: u64,
    pub n_per_class: usize,
    /// `(label, pixels)` in ascending label order.
    pub per_class: Vec<(u16, Vec<(usize, usize)>)>,
}

impl SampleSelection {
    /// Ascending labels; position `i` is network class index `i`.
    pub fn classes(&self) -> Vec<u16> {
        self.per_class.iter().map(|(l, _)| *l).collect()
    }

    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    /// `(pixel, class index)` pairs.
    pub fn training_pairs(&self) -> Vec<((usize, usize), usize)> {
        self.per_class
            .iter()
            .enumerate()
            .flat_map(|(i, (_, px))| px.iter().map(move |&p| (p, i)))
            .collect()
    }

    pub fn pixel_set(&self) -> HashSet<(usize, usize)> {
        self.per_class
            .iter()
            .flat_map(|(_, px)| px.iter().copied())
            .collect()
    }

    /// Labeled pixels of `gt` that were not selected, in scan order.
    pub fn test_pixels(&self, gt: &LabelMap) -> Vec<(usize, usize)> {
        let train = self.pixel_set();
        gt.labeled_pixels()
            .into_iter()
            .filter(|p| !train.contains(p))
            .collect()
    }
}

/// Uniform sampling without replacement of `n_per_class` pixels per class.
pub fn select_training_pixels(
    rng: &mut RngState,
    gt: &LabelMap,
    n_per_class: usize,
) -> Result<SampleSelection> {
    if n_per_class == 0 {
        return Err(Error::param("n_per_class must be positive"));
    }
    let classes = gt.classes();
    if classes.is_empty() {
        return Err(Error::Data("ground truth has no labeled pixels".into()));
    }
    let mut per_class = Vec::with_capacity(classes.len());
    for label in classes {
        let support = gt.pixels_of(label);
        if support.len() < n_per_class {
            return Err(Error::InsufficientSamples {
                class: label,
                available: support.len(),
                required: n_per_class,
            });
        }
        let picked = sample(rng, support.len(), n_per_class)
            .into_iter()
            .map(|i| support[i])
            .collect();
        per_class.push((label, picked));
    }
    Ok(SampleSelection {
        seed: rng.seed(),
        n_per_class,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell_sizes(cells: &[usize], parts: usize) -> Vec<usize> {
        let mut sizes = vec![0; parts];
        cells.iter().for_each(|&c| sizes[c] += 1);
        sizes
    }

    #[test]
    fn two_by_two_enumeration() {
        let map = grid_partition(10, 10, GridSpec::Divisions { rows: 2, cols: 2 }).unwrap();
        assert_eq!(map.class_count(), 4);
        assert_eq!(map.get(0, 0), 1);
        assert_eq!(map.get(9, 9), 4);
        assert_eq!(map.get(0, 9), 2);
        assert_eq!(map.get(9, 0), 3);
    }

    #[test]
    fn five_by_five_on_145() {
        let map = grid_partition(145, 145, GridSpec::Divisions { rows: 5, cols: 5 }).unwrap();
        assert_eq!(map.class_count(), 25);
        for label in 1..=25u16 {
            assert_eq!(map.pixels_of(label).len(), 29 * 29);
        }
    }

    #[test]
    fn block_parameterization() {
        let spec = GridSpec::Blocks {
            height: 5,
            width: 5,
        };
        assert_eq!(spec.divisions(145, 145).unwrap(), (29, 29));
        assert_eq!(spec.divisions(12, 7).unwrap(), (3, 2));
        let map = grid_partition(12, 7, spec).unwrap();
        assert_eq!(map.class_count(), 6);
    }

    #[test]
    fn oversized_divisions() {
        assert!(grid_partition(4, 4, GridSpec::Divisions { rows: 5, cols: 1 }).is_err());
        assert!(stripe_partition(4, 4, 5).is_err());
        assert!(stripe_partition(4, 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn cells_balanced(h in 1usize..80, w in 1usize..80, m in 1usize..80, n in 1usize..80) {
            prop_assume!(m <= h && n <= w);
            let map = grid_partition(h, w, GridSpec::Divisions { rows: m, cols: n }).unwrap();
            let mut counts = vec![0usize; m * n + 1];
            map.labels().iter().for_each(|&l| counts[l as usize] += 1);
            prop_assert_eq!(counts[0], 0);
            prop_assert!(counts[1..].iter().all(|&c| c > 0));
            for (cells, parts) in [(axis_cells(h, m), m), (axis_cells(w, n), n)] {
                let sizes = cell_sizes(&cells, parts);
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
        }
    }

    #[test]
    fn stripes_ten_wide() {
        let map = stripe_partition(3, 10, 2).unwrap();
        for r in 0..3 {
            for c in 0..10 {
                assert_eq!(map.get(r, c), if c < 5 { 1 } else { 2 });
            }
        }
    }

    #[test]
    fn stripes_81_on_145() {
        let map = stripe_partition(145, 145, 81).unwrap();
        assert_eq!(map.class_count(), 81);
        let widths = cell_sizes(&axis_cells(145, 81), 81);
        assert!(widths.iter().all(|&w| w == 1 || w == 2));
        for c in 0..145 {
            assert!((0..145).all(|r| map.get(r, c) == map.get(0, c)));
        }
    }

    fn toy_gt() -> LabelMap {
        LabelMap::new(2, 5, vec![1, 1, 2, 3, 0, 4, 5, 0, 2, 1]).unwrap()
    }

    #[test]
    fn join_identity_and_binary() {
        let gt = toy_gt();
        let identity: BTreeMap<u16, u16> = (1..=5).map(|l| (l, l)).collect();
        assert_eq!(join_classes(&gt, &identity).unwrap(), gt);
        let all: BTreeMap<u16, u16> = (1..=5).map(|l| (l, 1)).collect();
        let joined = join_classes(&gt, &all).unwrap();
        assert!(joined
            .labels()
            .iter()
            .zip(gt.labels())
            .all(|(&j, &g)| (g == 0) == (j == 0)));
        assert_eq!(joined.class_count(), 1);
    }

    #[test]
    fn join_ten_into_two() {
        let gt = LabelMap::from_fn(10, 10, |r, _| r as u16 + 1);
        let grouping: BTreeMap<u16, u16> =
            (1..=10).map(|l| (l, if l <= 5 { 1 } else { 2 })).collect();
        let joined = join_classes(&gt, &grouping).unwrap();
        assert_eq!(joined.classes(), vec![1, 2]);
    }

    #[test]
    fn join_uncovered_label() {
        let grouping: BTreeMap<u16, u16> = [(1, 1), (2, 1)].into_iter().collect();
        assert!(matches!(
            join_classes(&toy_gt(), &grouping),
            Err(Error::Mapping(_))
        ));
    }

    #[test]
    fn grouping_file_syntax() {
        let g = parse_grouping("# GT-2\n1=1\n2 = 1\n\n3=2 # tail\n").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[&3], 2);
        assert!(parse_grouping("1:2").is_err());
        assert!(parse_grouping("1=2\n1=3").is_err());
    }

    #[test]
    fn split_by_single_cell_is_relabeling() {
        let gt = toy_gt();
        let one = LabelMap::new(2, 5, vec![1; 10]).unwrap();
        let split = split_classes(&gt, &one).unwrap();
        let mut fwd = HashMap::new();
        let mut back = HashMap::new();
        for (&g, &s) in gt.labels().iter().zip(split.labels()) {
            assert_eq!(*fwd.entry(g).or_insert(s), s);
            assert_eq!(*back.entry(s).or_insert(g), g);
        }
        // first-occurrence numbering
        assert_eq!(&split.labels()[..4], &[1, 1, 2, 3]);
    }

    #[test]
    fn split_disjoint_halves() {
        let gt = LabelMap::from_fn(4, 4, |r, _| if r < 2 { 1 } else { 2 });
        let part = grid_partition(4, 4, GridSpec::Divisions { rows: 2, cols: 1 }).unwrap();
        let split = split_classes(&gt, &part).unwrap();
        let n = split.classes().len();
        assert!((2..=4).contains(&n));
    }

    #[test]
    fn split_dimension_mismatch() {
        let part = LabelMap::new(1, 1, vec![1]).unwrap();
        assert!(matches!(
            split_classes(&toy_gt(), &part),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn split_min_fragment_merges() {
        let gt = LabelMap::new(1, 4, vec![1, 1, 1, 1]).unwrap();
        let part = LabelMap::new(1, 4, vec![1, 1, 1, 2]).unwrap();
        assert_eq!(split_classes(&gt, &part).unwrap().classes(), vec![1, 2]);
        assert_eq!(
            split_classes_with_min(&gt, &part, 2).unwrap().classes(),
            vec![1]
        );
    }

    proptest! {
        #[test]
        fn split_refines_gt(labels in prop::collection::vec(0u16..5, 81)) {
            let gt = LabelMap::new(9, 9, labels).unwrap();
            let part = grid_partition(9, 9, GridSpec::Divisions { rows: 3, cols: 3 }).unwrap();
            let split = split_classes(&gt, &part).unwrap();
            let mut owner = HashMap::new();
            for (&g, &s) in gt.labels().iter().zip(split.labels()) {
                prop_assert_eq!(g == 0, s == 0);
                if s != 0 {
                    prop_assert_eq!(*owner.entry(s).or_insert(g), g);
                }
            }
        }

        #[test]
        fn join_coarsens_gt(labels in prop::collection::vec(0u16..6, 36), groups in prop::collection::vec(1u16..3, 5)) {
            let gt = LabelMap::new(6, 6, labels).unwrap();
            let grouping: BTreeMap<u16, u16> = (1..=5).zip(groups).collect();
            let joined = join_classes(&gt, &grouping).unwrap();
            let mut image = HashMap::new();
            for (&g, &j) in gt.labels().iter().zip(joined.labels()) {
                prop_assert_eq!(*image.entry(g).or_insert(j), j);
            }
        }
    }

    #[test]
    fn selection_full_support() {
        let gt = LabelMap::new(2, 3, vec![1, 1, 2, 2, 0, 1]).unwrap();
        let sel = select_training_pixels(&mut RngState::new(1), &gt, 2).unwrap();
        let mut ones = sel.per_class[0].1.clone();
        ones.sort();
        assert_eq!(sel.classes(), vec![1, 2]);
        assert_eq!(ones.len(), 2);
        let sel3 =
            select_training_pixels(&mut RngState::new(1), &gt.retain_classes(&[1]), 3).unwrap();
        let mut all = sel3.per_class[0].1.clone();
        all.sort();
        assert_eq!(all, gt.pixels_of(1));
    }

    #[test]
    fn selection_deterministic_and_disjoint() {
        let gt = LabelMap::from_fn(20, 20, |r, c| ((r / 5) * 2 + c / 10) as u16);
        let a = select_training_pixels(&mut RngState::new(9), &gt, 5).unwrap();
        let b = select_training_pixels(&mut RngState::new(9), &gt, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.training_pairs().len(), 5 * gt.classes().len());
        let train = a.pixel_set();
        let test = a.test_pixels(&gt);
        assert!(test.iter().all(|p| !train.contains(p)));
        assert_eq!(train.len() + test.len(), gt.labeled_pixels().len());
        for (label, px) in &a.per_class {
            assert!(px.iter().all(|&(r, c)| gt.get(r, c) == *label));
        }
    }

    #[test]
    fn selection_insufficient() {
        let gt = LabelMap::new(1, 3, vec![1, 2, 2]).unwrap();
        match select_training_pixels(&mut RngState::new(0), &gt, 2) {
            Err(Error::InsufficientSamples {
                class,
                available,
                required,
            }) => {
                assert_eq!((class, available, required), (1, 1, 2))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
