//! Synthetic dataset generation, balanced splitting, and persistence.
//!
//! Each example is an independently modulated random bit stream passed
//! through the channel model, sliced to one window at a random sub-symbol
//! offset, and power-normalized. Class and SNR cells are exactly balanced.
//! Example tensors and metadata are binary32 at rest, so save/load round
//! trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::channel::{apply_channel, ChannelSpec};
use crate::classifier::{Example, ExampleMeta};
use crate::error::{Error, Result};
use crate::modem::{modulate, random_bits, ModScheme, PulseShape};
use crate::rng::{derive_seed, Rng};
use crate::signal::IqSignal;

const TAG_GEN: u64 = 0x6473_0001;
const TAG_NOISE: u64 = 0x6473_0002;
const TAG_SPLIT: u64 = 0x6473_0003;

const MAGIC: &[u8; 8] = b"RFMLDS01";

/// Quantize to the binary32 grid.
fn q32(v: f64) -> f64 {
    v as f32 as f64
}

/// Generation recipe: which schemes, channel grids, and example counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub input_size: usize,
    pub schemes: Vec<ModScheme>,
    pub sps: usize,
    pub span_grid: Vec<u8>,
    pub rolloff_grid: Vec<f64>,
    pub es_n0_grid_db: Vec<f64>,
    pub cfo_grid: Vec<f64>,
    pub examples_per_class_per_snr: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// The standard recipe: five schemes, 8 samples per symbol, one-sided
    /// span 7..10, roll-off 0.34..0.36 step 0.01, Es/N0 0..20 dB step 2,
    /// carrier offset -1%..1% step 0.2%.
    pub fn standard(input_size: usize, examples_per_class_per_snr: usize, seed: u64) -> Self {
        DatasetSpec {
            input_size,
            schemes: ModScheme::ALL.to_vec(),
            sps: 8,
            span_grid: (7..=10).collect(),
            rolloff_grid: (0..3).map(|k| q32(0.34 + 0.01 * k as f64)).collect(),
            es_n0_grid_db: (0..=10).map(|k| (2 * k) as f64).collect(),
            cfo_grid: (-5..=5).map(|k| q32(0.002 * k as f64)).collect(),
            examples_per_class_per_snr,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.input_size, 128 | 256 | 512) {
            return Err(Error::invalid(format!(
                "input size must be 128, 256 or 512, got {}",
                self.input_size
            )));
        }
        if self.sps < 2 || !self.input_size.is_multiple_of(self.sps) {
            return Err(Error::invalid(
                "samples per symbol must be >= 2 and divide the input size",
            ));
        }
        if self.schemes.is_empty()
            || self.span_grid.is_empty()
            || self.rolloff_grid.is_empty()
            || self.es_n0_grid_db.is_empty()
            || self.cfo_grid.is_empty()
        {
            return Err(Error::invalid("dataset grids must be nonempty"));
        }
        if self.examples_per_class_per_snr == 0 {
            return Err(Error::invalid("examples per cell must be positive"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.schemes.len()
    }

    pub fn total_examples(&self) -> usize {
        self.schemes.len() * self.es_n0_grid_db.len() * self.examples_per_class_per_snr
    }
}

/// A generated example set together with its recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// How far into the generated stream a window may start, in multiples of
/// the window length. Large enough that the carrier phase at the window
/// start wraps fully for every nonzero offset in the grid, as it would
/// when capturing windows from a long transmission.
const START_SPAN_WINDOWS: usize = 8;

/// Modulate, impair, and window one example; returns the rotated clean
/// signal, the received signal, and the window start. Split out so tests
/// can measure the realized SNR of the generator.
pub(crate) fn synthesize_parts(
    spec: &DatasetSpec,
    class_idx: usize,
    snr_idx: usize,
    example_idx: usize,
) -> Result<(IqSignal, IqSignal, usize)> {
    let scheme = spec.schemes[class_idx];
    let es_n0_db = spec.es_n0_grid_db[snr_idx];
    let tags = [
        TAG_GEN,
        class_idx as u64,
        snr_idx as u64,
        example_idx as u64,
    ];
    let mut rng = Rng::from_tags(spec.seed, &tags);
    let span = spec.span_grid[rng.next_below(spec.span_grid.len())];
    let rolloff = spec.rolloff_grid[rng.next_below(spec.rolloff_grid.len())];
    let cfo = spec.cfo_grid[rng.next_below(spec.cfo_grid.len())];
    let start = rng.next_below(START_SPAN_WINDOWS * spec.input_size);

    let num_symbols = (START_SPAN_WINDOWS + 1) * spec.input_size / spec.sps + 2;
    let bits = random_bits(num_symbols * scheme.bits_per_symbol(), &mut rng);
    let shape = PulseShape::new(spec.sps, span as usize, rolloff)?;
    let clean = modulate(&bits, scheme, &shape)?;

    let noise_seed = derive_seed(
        spec.seed,
        &[TAG_NOISE, class_idx as u64, snr_idx as u64, example_idx as u64],
    );
    let received = apply_channel(&clean, &ChannelSpec::new(es_n0_db, cfo, noise_seed)?);
    let rotated_clean = apply_channel(&clean, &ChannelSpec::rotation_only(cfo)?);
    Ok((rotated_clean, received, start))
}

fn synthesize_example(
    spec: &DatasetSpec,
    class_idx: usize,
    snr_idx: usize,
    example_idx: usize,
) -> Result<Example> {
    let (_, received, start) = synthesize_parts(spec, class_idx, snr_idx, example_idx)?;
    let window =
        crate::signal::IqTensor::from_complex(&received.samples()[start..start + spec.input_size])?;
    let mut tensor = window.normalized()?;
    for v in tensor.i.iter_mut().chain(tensor.q.iter_mut()) {
        *v = q32(*v);
    }

    // Re-derive the per-example draws for the metadata record.
    let tags = [
        TAG_GEN,
        class_idx as u64,
        snr_idx as u64,
        example_idx as u64,
    ];
    let mut rng = Rng::from_tags(spec.seed, &tags);
    let span = spec.span_grid[rng.next_below(spec.span_grid.len())];
    let rolloff = spec.rolloff_grid[rng.next_below(spec.rolloff_grid.len())];
    let cfo = spec.cfo_grid[rng.next_below(spec.cfo_grid.len())];

    Ok(Example {
        tensor,
        label: class_idx,
        es_n0_db: spec.es_n0_grid_db[snr_idx],
        meta: ExampleMeta {
            scheme: spec.schemes[class_idx],
            cfo,
            span_symbols: span,
            rolloff,
        },
    })
}

/// Generate a balanced dataset per the recipe. Deterministic given the
/// spec's seed; output order is (class, SNR, index).
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut coords = Vec::with_capacity(spec.total_examples());
    for class_idx in 0..spec.schemes.len() {
        for snr_idx in 0..spec.es_n0_grid_db.len() {
            for example_idx in 0..spec.examples_per_class_per_snr {
                coords.push((class_idx, snr_idx, example_idx));
            }
        }
    }
    let examples: Vec<Example> = coords
        .par_iter()
        .map(|&(c, s, i)| synthesize_example(spec, c, s, i))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        examples,
    })
}

fn snr_index(spec: &DatasetSpec, es_n0_db: f64) -> usize {
    spec.es_n0_grid_db
        .iter()
        .position(|&v| v == es_n0_db)
        .expect("example SNR comes from the grid")
}

/// Random per-cell balanced split into (train, val, test). `test_frac` of
/// each cell is withheld for test, then `val_frac_of_train` of the
/// remainder (floor rounding) goes to validation.
pub fn split(
    ds: &Dataset,
    test_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_frac) || !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(Error::invalid("split fractions must lie in [0, 1)"));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (idx, ex) in ds.examples.iter().enumerate() {
        cells
            .entry((ex.label, snr_index(&ds.spec, ex.es_n0_db)))
            .or_default()
            .push(idx);
    }

    let mut train_ids = Vec::new();
    let mut val_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (&(class_idx, snr_idx), ids) in &cells {
        let n = ids.len();
        let test_n = (test_frac * n as f64).floor() as usize;
        let rest = n - test_n;
        let val_n = (val_frac_of_train * rest as f64).floor() as usize;
        let train_n = rest - val_n;
        if test_n == 0 || val_n == 0 || train_n == 0 {
            return Err(Error::invalid(format!(
                "cell (class {class_idx}, snr {snr_idx}) with {n} examples is too small to split"
            )));
        }
        let mut shuffled = ids.clone();
        Rng::from_tags(seed, &[TAG_SPLIT, class_idx as u64, snr_idx as u64])
            .shuffle(&mut shuffled);
        test_ids.extend_from_slice(&shuffled[..test_n]);
        val_ids.extend_from_slice(&shuffled[test_n..test_n + val_n]);
        train_ids.extend_from_slice(&shuffled[test_n + val_n..]);
    }

    let pick = |ids: &[usize]| Dataset {
        spec: ds.spec.clone(),
        examples: ids.iter().map(|&i| ds.examples[i].clone()).collect(),
    };
    Ok((pick(&train_ids), pick(&val_ids), pick(&test_ids)))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.data.len() {
            return Err(Error::corrupt("truncated dataset file"));
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn scheme_id(scheme: ModScheme) -> u8 {
    ModScheme::ALL
        .iter()
        .position(|&s| s == scheme)
        .expect("scheme is in the catalog") as u8
}

/// Serialize a dataset: magic, spec block, then fixed-size example records
/// of (u16 label, f32 es_n0, f32 cfo, u8 span, f32 rolloff, 2N binary32
/// samples, I row then Q row).
pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let spec = &ds.spec;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(spec.input_size as u32).to_le_bytes());
    out.extend_from_slice(&(spec.sps as u32).to_le_bytes());
    out.extend_from_slice(&(spec.examples_per_class_per_snr as u32).to_le_bytes());
    out.extend_from_slice(&spec.seed.to_le_bytes());
    out.push(spec.schemes.len() as u8);
    for &s in &spec.schemes {
        out.push(scheme_id(s));
    }
    let write_f32_grid = |out: &mut Vec<u8>, grid: &[f64]| {
        out.extend_from_slice(&(grid.len() as u32).to_le_bytes());
        for &v in grid {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    write_f32_grid(&mut out, &spec.es_n0_grid_db);
    write_f32_grid(&mut out, &spec.cfo_grid);
    out.extend_from_slice(&(spec.span_grid.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec.span_grid);
    write_f32_grid(&mut out, &spec.rolloff_grid);

    out.extend_from_slice(&(ds.examples.len() as u64).to_le_bytes());
    for ex in &ds.examples {
        out.extend_from_slice(&(ex.label as u16).to_le_bytes());
        out.extend_from_slice(&(ex.es_n0_db as f32).to_le_bytes());
        out.extend_from_slice(&(ex.meta.cfo as f32).to_le_bytes());
        out.push(ex.meta.span_symbols);
        out.extend_from_slice(&(ex.meta.rolloff as f32).to_le_bytes());
        for &v in ex.tensor.i.iter().chain(&ex.tensor.q) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a dataset saved by [`save`].
pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        data: &bytes,
        pos: 0,
    };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        if magic[..6] == MAGIC[..6] {
            return Err(Error::VersionMismatch {
                found: String::from_utf8_lossy(magic).into_owned(),
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
            });
        }
        return Err(Error::corrupt("bad magic; not a dataset file"));
    }

    let input_size = cur.u32()? as usize;
    let sps = cur.u32()? as usize;
    let examples_per_class_per_snr = cur.u32()? as usize;
    let seed = cur.u64()?;
    let scheme_count = cur.u8()? as usize;
    let mut schemes = Vec::with_capacity(scheme_count);
    for _ in 0..scheme_count {
        let id = cur.u8()? as usize;
        let scheme = *ModScheme::ALL
            .get(id)
            .ok_or_else(|| Error::corrupt(format!("unknown scheme id {id}")))?;
        schemes.push(scheme);
    }
    let read_f32_grid = |cur: &mut Cursor| -> Result<Vec<f64>> {
        let len = cur.u32()? as usize;
        (0..len).map(|_| Ok(cur.f32()? as f64)).collect()
    };
    let es_n0_grid_db = read_f32_grid(&mut cur)?;
    let cfo_grid = read_f32_grid(&mut cur)?;
    let span_len = cur.u32()? as usize;
    let span_grid = cur.take(span_len)?.to_vec();
    let rolloff_grid = read_f32_grid(&mut cur)?;

    let spec = DatasetSpec {
        input_size,
        schemes,
        sps,
        span_grid,
        rolloff_grid,
        es_n0_grid_db,
        cfo_grid,
        examples_per_class_per_snr,
        seed,
    };
    spec.validate()
        .map_err(|e| Error::corrupt(format!("invalid stored spec: {e}")))?;

    let count = cur.u64()? as usize;
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let label = cur.u16()? as usize;
        if label >= spec.schemes.len() {
            return Err(Error::corrupt(format!("label {label} out of range")));
        }
        let es_n0_db = cur.f32()? as f64;
        let cfo = cur.f32()? as f64;
        let span_symbols = cur.u8()?;
        let rolloff = cur.f32()? as f64;
        let mut i = Vec::with_capacity(input_size);
        let mut q = Vec::with_capacity(input_size);
        for _ in 0..input_size {
            i.push(cur.f32()? as f64);
        }
        for _ in 0..input_size {
            q.push(cur.f32()? as f64);
        }
        examples.push(Example {
            tensor: crate::signal::IqTensor::new(i, q)?,
            label,
            es_n0_db,
            meta: ExampleMeta {
                scheme: spec.schemes[label],
                cfo,
                span_symbols,
                rolloff,
            },
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::corrupt("trailing bytes after last example"));
    }
    Ok(Dataset { spec, examples })
}
