//! Training data containers: dictionaries, hyperspectral cubes and label maps.
//!
//! A [`Dictionary`] stores training samples as columns, grouped contiguously
//! by class. Classes are renumbered densely to `1..=C` in ascending order of
//! the original label; the original labels are kept so reports can map back.

mod io;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_dense_dataset, load_hsi_cube, read_label_map_csv, read_labels, read_matrix, write_hsi_cube,
    write_label_map_csv, write_label_map_pgm, CubeDtype,
};

/// Column preparation applied when a dictionary is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    /// Every column divided by its Euclidean norm.
    L2Columns,
    /// Per-feature min/max of the training set mapped to `[0, 1]`.
    RangeScaled,
}

/// Contiguous block of dictionary columns belonging to one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    pub class_id: usize,
    pub start: usize,
    pub count: usize,
}

impl ClassPartition {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.count
    }
}

/// Per-feature affine map fitted on training data. Test data is mapped with
/// the same parameters and is not clamped, so values may leave `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingParams {
    /// Fits per-feature min and max over the rows of `samples`.
    pub fn fit(samples: ArrayView2<'_, f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Dimension("cannot fit scaling on zero samples".into()));
        }
        let mut min = vec![f64::INFINITY; samples.ncols()];
        let mut max = vec![f64::NEG_INFINITY; samples.ncols()];
        for row in samples.rows() {
            for (k, &x) in row.iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        Ok(Self { min, max })
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Maps `x` feature-wise. Constant features (max = min) map to `x - min`.
    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.len() {
            return Err(Error::Dimension(format!(
                "sample has {} features, scaling expects {}",
                x.len(),
                self.len()
            )));
        }
        Ok(Array1::from_iter(x.iter().enumerate().map(|(k, &v)| {
            let range = self.max[k] - self.min[k];
            if range > 0.0 {
                (v - self.min[k]) / range
            } else {
                v - self.min[k]
            }
        })))
    }
}

/// Labeled training samples stored column-wise (`B × N`), grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    columns: Array2<f64>,
    classes: Vec<ClassPartition>,
    column_class: Vec<usize>,
    original_labels: Vec<i64>,
    norm_mode: NormMode,
    scaling: Option<ScalingParams>,
}

/// Samples reordered so that each class occupies a contiguous column block.
#[derive(Debug, Clone)]
pub(crate) struct Grouped {
    pub columns: Array2<f64>,
    pub classes: Vec<ClassPartition>,
    pub original_labels: Vec<i64>,
}

/// Groups `samples` (one sample per row) by label, ascending, keeping the
/// original order inside each class.
pub(crate) fn group_by_class(samples: ArrayView2<'_, f64>, labels: &[i64]) -> Result<Grouped> {
    if samples.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            labels: labels.len(),
            samples: samples.nrows(),
        });
    }
    if samples.nrows() == 0 {
        return Err(Error::Dimension("dictionary needs at least one sample".into()));
    }
    if samples.ncols() == 0 {
        return Err(Error::Dimension("samples have zero features".into()));
    }
    let mut distinct: Vec<i64> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();

    let mut order: Vec<usize> = (0..labels.len()).collect();
    // stable sort keeps intra-class order
    order.sort_by_key(|&i| labels[i]);

    let mut columns = Array2::zeros((samples.ncols(), samples.nrows()));
    for (dst, &src) in order.iter().enumerate() {
        columns.column_mut(dst).assign(&samples.row(src));
    }

    let mut classes = Vec::with_capacity(distinct.len());
    let mut start = 0;
    for (k, &label) in distinct.iter().enumerate() {
        let count = labels.iter().filter(|&&l| l == label).count();
        classes.push(ClassPartition {
            class_id: k + 1,
            start,
            count,
        });
        start += count;
    }
    Ok(Grouped {
        columns,
        classes,
        original_labels: distinct,
    })
}

/// Builds a dictionary from `samples` (one sample per row) and their labels.
///
/// Labels may be any integers; they are renumbered to `1..=C` in ascending
/// order. Columns are grouped by class with the original intra-class order
/// preserved, then normalized according to `norm_mode`.
pub fn build_dictionary(
    samples: ArrayView2<'_, f64>,
    labels: &[i64],
    norm_mode: NormMode,
) -> Result<Dictionary> {
    let grouped = group_by_class(samples, labels)?;
    match norm_mode {
        NormMode::L2Columns => Dictionary::from_grouped(grouped, NormMode::L2Columns, None),
        NormMode::RangeScaled => {
            let scaling = ScalingParams::fit(samples)?;
            let mut grouped = grouped;
            for mut col in grouped.columns.columns_mut() {
                let scaled = scaling.apply(col.view())?;
                col.assign(&scaled);
            }
            Dictionary::from_grouped(grouped, NormMode::RangeScaled, Some(scaling))
        }
    }
}

impl Dictionary {
    /// Wraps already grouped columns. `L2Columns` normalizes here.
    pub(crate) fn from_grouped(
        grouped: Grouped,
        norm_mode: NormMode,
        scaling: Option<ScalingParams>,
    ) -> Result<Self> {
        let Grouped {
            mut columns,
            classes,
            original_labels,
        } = grouped;
        if let Some((index, _)) = columns
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::NonFinite { index });
        }
        if norm_mode == NormMode::L2Columns {
            for (index, mut col) in columns.columns_mut().into_iter().enumerate() {
                let norm = col.dot(&col).sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroNorm { index });
                }
                col.mapv_inplace(|v| v / norm);
            }
        }
        let mut column_class = vec![0; columns.ncols()];
        for part in &classes {
            if part.count == 0 {
                return Err(Error::EmptyClass {
                    class_id: part.class_id,
                });
            }
            for c in part.range() {
                column_class[c] = part.class_id;
            }
        }
        Ok(Self {
            columns,
            classes,
            column_class,
            original_labels,
            norm_mode,
            scaling,
        })
    }

    pub fn columns(&self) -> ArrayView2<'_, f64> {
        self.columns.view()
    }

    pub fn column(&self, index: usize) -> ArrayView1<'_, f64> {
        self.columns.column(index)
    }

    /// Feature dimension `B`.
    pub fn num_features(&self) -> usize {
        self.columns.nrows()
    }

    /// Sample count `N`.
    pub fn num_samples(&self) -> usize {
        self.columns.ncols()
    }

    /// Class count `C`.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassPartition] {
        &self.classes
    }

    pub fn class(&self, class_id: usize) -> Option<&ClassPartition> {
        class_id
            .checked_sub(1)
            .and_then(|k| self.classes.get(k))
    }

    /// Class id (`1..=C`) of a column.
    pub fn class_of(&self, column: usize) -> usize {
        self.column_class[column]
    }

    pub fn column_classes(&self) -> &[usize] {
        &self.column_class
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn scaling(&self) -> Option<&ScalingParams> {
        self.scaling.as_ref()
    }

    /// Original label of a dense class id.
    pub fn original_label(&self, class_id: usize) -> Option<i64> {
        class_id
            .checked_sub(1)
            .and_then(|k| self.original_labels.get(k).copied())
    }

    /// Dense class id of an original label.
    pub fn class_id_of_label(&self, label: i64) -> Option<usize> {
        self.original_labels
            .binary_search(&label)
            .ok()
            .map(|k| k + 1)
    }

    pub fn original_labels(&self) -> &[i64] {
        &self.original_labels
    }

    /// Brings a raw test sample into the dictionary's feature space.
    /// Range-scaled dictionaries apply their training scaling; L2 dictionaries
    /// leave the sample alone since the classifiers normalize it themselves.
    pub fn prepare_sample(&self, y: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if y.len() != self.num_features() {
            return Err(Error::Dimension(format!(
                "sample has {} features, dictionary has {}",
                y.len(),
                self.num_features()
            )));
        }
        match &self.scaling {
            Some(s) => s.apply(y),
            None => Ok(y.to_owned()),
        }
    }

    /// Sub-dictionary with the given columns (in the given order, which must
    /// keep classes contiguous and ascending).
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        let labels: Vec<i64> = keep
            .iter()
            .map(|&c| self.original_labels[self.column_class[c] - 1])
            .collect();
        let samples = self.columns.select(Axis(1), keep).reversed_axes();
        let grouped = group_by_class(samples.view(), &labels)?;
        Self::from_grouped(grouped, self.norm_mode, self.scaling.clone())
    }
}

/// Scaling state of a cube's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleMode {
    None,
    RangeScaled,
}

/// Hyperspectral cube, band-sequential: value `(b, r, c)` lives at
/// `b·H·W + r·W + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f64>,
    scale_mode: ScaleMode,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        let expected = height * width * bands;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "cube {height}x{width}x{bands} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            bands,
            values,
            scale_mode: ScaleMode::None,
        })
    }

    /// Builds a cube from a `(height, width, bands)` array.
    pub fn from_hwb(data: ndarray::ArrayView3<'_, f64>) -> Result<Self> {
        let (h, w, b) = data.dim();
        let bsq = data.permuted_axes([2, 0, 1]);
        Self::new(h, w, b, bsq.iter().copied().collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale_mode(&self) -> ScaleMode {
        self.scale_mode
    }

    pub fn band(&self, b: usize) -> ArrayView2<'_, f64> {
        let plane = self.height * self.width;
        ArrayView2::from_shape((self.height, self.width), &self.values[b * plane..(b + 1) * plane])
            .expect("band slice matches its shape")
    }

    /// Spectrum of one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> Array1<f64> {
        let plane = self.height * self.width;
        let offset = row * self.width + col;
        Array1::from_iter((0..self.bands).map(|b| self.values[b * plane + offset]))
    }

    /// All spectra as a `(H·W) × B` matrix, row-major pixel order.
    pub fn pixels(&self) -> Array2<f64> {
        let plane = self.height * self.width;
        let bsq = ArrayView2::from_shape((self.bands, plane), &self.values)
            .expect("cube values match their shape");
        bsq.t().to_owned()
    }

    /// Applies training scaling to every pixel.
    pub fn scaled(&self, params: &ScalingParams) -> Result<Self> {
        if params.len() != self.bands {
            return Err(Error::Dimension(format!(
                "scaling has {} features, cube has {} bands",
                params.len(),
                self.bands
            )));
        }
        let plane = self.height * self.width;
        let mut values = self.values.clone();
        for b in 0..self.bands {
            let range = params.max[b] - params.min[b];
            for v in &mut values[b * plane..(b + 1) * plane] {
                *v -= params.min[b];
                if range > 0.0 {
                    *v /= range;
                }
            }
        }
        Ok(Self {
            values,
            scale_mode: ScaleMode::RangeScaled,
            ..*self
        })
    }
}

/// Integer label grid: 0 = unlabeled, `1..=C` = class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Dimension(format!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: usize) {
        self.labels[row * self.width + col] = label;
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    fn check_dims(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::Dimension(format!(
                "{what} is {}x{}, expected {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Training and test samples drawn from a cube by a training mask.
#[derive(Debug, Clone)]
pub struct MaskSplit {
    /// One training spectrum per row.
    pub train: Array2<f64>,
    pub train_labels: Vec<i64>,
    /// One test spectrum per row.
    pub test: Array2<f64>,
    pub test_labels: Vec<i64>,
    /// `(row, col)` of every test sample.
    pub test_coords: Vec<(usize, usize)>,
}

/// Training samples are the pixels with `train_mask > 0`; test samples are
/// the remaining labeled ground-truth pixels.
pub fn split_by_mask(cube: &HsiCube, gt: &LabelMap, train_mask: &LabelMap) -> Result<MaskSplit> {
    gt.check_dims(cube.height(), cube.width(), "ground truth")?;
    train_mask.check_dims(cube.height(), cube.width(), "training mask")?;
    if gt.labels().iter().all(|&l| l == 0) {
        return Err(Error::NoLabeledPixels);
    }
    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_labels = Vec::new();
    let mut test_coords = Vec::new();
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            let t = train_mask.get(r, c);
            let g = gt.get(r, c);
            if t > 0 {
                if t != g {
                    return Err(Error::MaskDisagreement {
                        row: r,
                        col: c,
                        train: t,
                        truth: g,
                    });
                }
                train_rows.push(cube.pixel(r, c));
                train_labels.push(t as i64);
            } else if g > 0 {
                test_rows.push(cube.pixel(r, c));
                test_labels.push(g as i64);
                test_coords.push((r, c));
            }
        }
    }
    let mut trained: Vec<i64> = train_labels.clone();
    trained.sort_unstable();
    trained.dedup();
    if let Some(&missing) = test_labels
        .iter()
        .find(|l| trained.binary_search(l).is_err())
    {
        return Err(Error::EmptyClass {
            class_id: missing as usize,
        });
    }
    Ok(MaskSplit {
        train: stack_rows(&train_rows, cube.bands()),
        train_labels,
        test: stack_rows(&test_rows, cube.bands()),
        test_labels,
        test_coords,
    })
}

fn stack_rows(rows: &[Array1<f64>], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        out.row_mut(i).assign(row);
    }
    out
}

/// Renders rectangular blocks `(row0, col0, height, width)` of the ground
/// truth into a training mask.
pub fn mask_from_blocks(gt: &LabelMap, blocks: &[(usize, usize, usize, usize)]) -> LabelMap {
    let mut mask = LabelMap::zeros(gt.height(), gt.width());
    for &(r0, c0, h, w) in blocks {
        for r in r0..(r0 + h).min(gt.height()) {
            for c in c0..(c0 + w).min(gt.width()) {
                mask.set(r, c, gt.get(r, c));
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn l2_column_is_normalized() {
        let d = build_dictionary(array![[3.0, 4.0]].view(), &[1], NormMode::L2Columns).unwrap();
        assert!((d.column(0)[0] - 0.6).abs() < 1e-15);
        assert!((d.column(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_column_rejected() {
        let err = build_dictionary(array![[0.0, 0.0]].view(), &[1], NormMode::L2Columns);
        assert!(matches!(err, Err(Error::ZeroNorm { index: 0 })));
    }

    #[test]
    fn interleaved_labels_are_grouped() {
        let s = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let d = build_dictionary(s.view(), &[2, 1, 2], NormMode::L2Columns).unwrap();
        assert_eq!(
            d.classes(),
            &[
                ClassPartition { class_id: 1, start: 0, count: 1 },
                ClassPartition { class_id: 2, start: 1, count: 2 },
            ]
        );
        assert_eq!(d.column_classes(), &[1, 2, 2]);
        // intra-class order preserved: [1,0] then [1,1]/√2
        assert!((d.column(1)[0] - 1.0).abs() < 1e-15);
        assert!((d.column(2)[1] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((d.column(0)[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn labels_renumbered_densely() {
        let s = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let d = build_dictionary(s.view(), &[40, 7, 40], NormMode::L2Columns).unwrap();
        assert_eq!(d.original_labels(), &[7, 40]);
        assert_eq!(d.class_id_of_label(40), Some(2));
        assert_eq!(d.original_label(1), Some(7));
    }

    #[test]
    fn range_scaling_hits_zero_and_one() {
        let s = array![[100.0, 20.0], [50.0, 40.0], [0.0, 30.0]];
        let d = build_dictionary(s.view(), &[1, 1, 2], NormMode::RangeScaled).unwrap();
        let cols = d.columns();
        for k in 0..2 {
            let row = cols.row(k);
            assert_eq!(row.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
        // test values are not clamped
        let y = d.prepare_sample(array![110.0, 45.0].view()).unwrap();
        assert!((y[0] - 1.1).abs() < 1e-12);
        assert!((y[1] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn split_counts() {
        let cube = HsiCube::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gt = LabelMap::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let mask = LabelMap::new(2, 2, vec![1, 0, 2, 0]).unwrap();
        let s = split_by_mask(&cube, &gt, &mask).unwrap();
        assert_eq!(s.train.nrows(), 2);
        assert_eq!(s.test.nrows(), 2);
        assert_eq!(s.test_coords, vec![(0, 1), (1, 1)]);
        assert_eq!(s.test_labels, vec![1, 2]);
        assert_eq!(s.test[[1, 0]], 4.0);
    }

    #[test]
    fn split_no_labels() {
        let cube = HsiCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let gt = LabelMap::zeros(2, 2);
        let err = split_by_mask(&cube, &gt, &gt).unwrap_err();
        assert!(err.to_string().contains("no labeled pixels"));
    }

    #[test]
    fn split_disagreement() {
        let cube = HsiCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let gt = LabelMap::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let mask = LabelMap::new(2, 2, vec![0, 2, 0, 0]).unwrap();
        assert!(matches!(
            split_by_mask(&cube, &gt, &mask),
            Err(Error::MaskDisagreement { row: 0, col: 1, train: 2, truth: 1 })
        ));
    }

    #[test]
    fn split_missing_training_class() {
        let cube = HsiCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let gt = LabelMap::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let mask = LabelMap::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        assert!(matches!(
            split_by_mask(&cube, &gt, &mask),
            Err(Error::EmptyClass { class_id: 2 })
        ));
    }

    #[test]
    fn cube_layout_is_band_sequential() {
        let cube = HsiCube::new(1, 2, 2, vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        assert_eq!(cube.pixel(0, 1).to_vec(), vec![2.0, 20.0]);
        assert_eq!(cube.band(1)[[0, 0]], 10.0);
        assert_eq!(cube.pixels().row(0).to_vec(), vec![1.0, 10.0]);
    }

    #[test]
    fn cube_rejects_non_finite() {
        assert!(matches!(
            HsiCube::new(1, 2, 1, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }
}
