//! Batch generation of grasp sequences, the record file, statistics and
//! the diffusion training export.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{SceneObject, TERM_COUNT};
use crate::error::{Error, Result};
use crate::geometry::{
    bps_encode, farthest_point_indices, is_mesh_path, load_mesh, load_or_build, PointCloud, SdfGrid, TriMesh,
};
use crate::hand::{GraspConfig, HandSpec};
use crate::sampler::{seqgrasp, SequenceParams, Termination};
use crate::seed::{self, Stream};
use crate::validation::{validate_sequence, ObjectVerdict, SequenceGrasp, ValidationParams};

pub const RECORD_FORMAT: &str = "seqgrasp-records";
pub const RECORD_VERSION: u32 = 1;
pub const EXPORT_FORMAT: &str = "seqgrasp-diffusion";
pub const EXPORT_VERSION: u32 = 1;
/// Fraction of objects placed in the training split.
pub const TRAIN_FRACTION: f64 = 0.8;
/// Surface points used to build an object's BPS feature.
pub const BPS_CLOUD_SIZE: usize = 1024;
const SDF_CACHE_DIR: &str = ".sdf-cache";

/// An object mesh, centered on its centroid, with its unit-scale grid.
#[derive(Debug, Clone)]
pub struct PoolObject {
    pub id: String,
    pub mesh: Arc<TriMesh>,
    pub sdf: Arc<SdfGrid>,
}

#[derive(Debug, Clone, Default)]
pub struct ObjectPool {
    pub objects: Vec<PoolObject>,
    pub resolution: usize,
}

#[derive(Debug, Default)]
pub struct PoolLoad {
    pub pool: ObjectPool,
    /// Meshes that could not be loaded, with the reason.
    pub failures: Vec<(PathBuf, String)>,
    /// Grids that had to be built rather than read from the cache.
    pub rebuilt: usize,
}

pub fn sdf_cache_path(dir: &Path, mesh_file: &Path, resolution: usize) -> PathBuf {
    let name = mesh_file.file_name().and_then(|n| n.to_str()).unwrap_or("mesh");
    dir.join(SDF_CACHE_DIR).join(format!("{name}.r{resolution}.sdf"))
}

fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_mesh_path(p))
        .collect();
    files.sort();
    Ok(files)
}

impl ObjectPool {
    /// Load every OBJ/STL file in `dir` (sorted by name), recentered, with
    /// grids read from or written to the cache directory inside `dir`.
    pub fn load(dir: impl AsRef<Path>, resolution: usize) -> Result<PoolLoad> {
        let dir = dir.as_ref();
        let files = mesh_files(dir)?;
        let cache_dir = dir.join(SDF_CACHE_DIR);
        if !files.is_empty() {
            std::fs::create_dir_all(&cache_dir).map_err(|e| Error::io(&cache_dir, e))?;
        }
        let loaded: Vec<(PathBuf, Result<(PoolObject, bool)>)> = files
            .par_iter()
            .map(|path| {
                let r = (|| {
                    let mesh = load_mesh(path)?.recentered();
                    let (sdf, rebuilt) = load_or_build(&mesh, resolution, sdf_cache_path(dir, path, resolution))?;
                    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("object").to_string();
                    Ok((
                        PoolObject {
                            id,
                            mesh: Arc::new(mesh),
                            sdf: Arc::new(sdf),
                        },
                        rebuilt,
                    ))
                })();
                (path.clone(), r)
            })
            .collect();
        let mut out = PoolLoad {
            pool: ObjectPool {
                objects: Vec::new(),
                resolution,
            },
            ..Default::default()
        };
        for (path, r) in loaded {
            match r {
                Ok((obj, rebuilt)) => {
                    out.rebuilt += rebuilt as usize;
                    out.pool.objects.push(obj);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    out.failures.push((path, e.to_string()));
                }
            }
        }
        Ok(out)
    }

    /// Pool from in-memory meshes; each is recentered.
    pub fn from_meshes(meshes: Vec<(String, TriMesh)>, resolution: usize) -> Result<Self> {
        let objects = meshes
            .into_par_iter()
            .map(|(id, mesh)| {
                let mesh = mesh.recentered();
                let sdf = SdfGrid::build(&mesh, resolution)?;
                Ok(PoolObject {
                    id,
                    mesh: Arc::new(mesh),
                    sdf: Arc::new(sdf),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { objects, resolution })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Object `index` scaled by `scale`, with surface samples drawn from `seed`.
    pub fn instance(&self, index: usize, scale: f64, seed: u64) -> SceneObject {
        let o = &self.objects[index];
        let (mesh, sdf) = if scale == 1.0 {
            ((*o.mesh).clone(), (*o.sdf).clone())
        } else {
            (o.mesh.scaled(scale), o.sdf.scaled(scale))
        };
        SceneObject::new(o.id.clone(), mesh, sdf, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub sets: usize,
    pub objects_per_set: usize,
    pub perms_per_set: usize,
    /// Range for the longest bounding-box edge (m); `None` keeps meshes as loaded.
    pub extent_range: Option<(f64, f64)>,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self {
            sets: 1,
            objects_per_set: 4,
            perms_per_set: 4,
            extent_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSequence {
    pub set: usize,
    /// Pool indices in grasp order.
    pub objects: Vec<usize>,
    pub scales: Vec<f64>,
}

fn saturating_binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

fn saturating_factorial(n: usize) -> usize {
    (1..=n).try_fold(1usize, |acc, i| acc.checked_mul(i)).unwrap_or(usize::MAX)
}

/// `sets` distinct object sets, each permuted `perms` distinct ways.
pub fn plan_orders<R: Rng + ?Sized>(
    pool_size: usize,
    sets: usize,
    objects_per_set: usize,
    perms: usize,
    rng: &mut R,
) -> Result<Vec<(usize, Vec<usize>)>> {
    if objects_per_set == 0 || perms == 0 {
        return Err(Error::InvalidParameter("objects per set and permutations must be positive".into()));
    }
    if pool_size < objects_per_set {
        return Err(Error::Dataset(format!(
            "object pool has {pool_size} objects, need at least {objects_per_set}"
        )));
    }
    if saturating_binomial(pool_size, objects_per_set) < sets {
        return Err(Error::Dataset(format!(
            "only {} distinct sets of {objects_per_set} exist in a pool of {pool_size}",
            saturating_binomial(pool_size, objects_per_set)
        )));
    }
    if saturating_factorial(objects_per_set) < perms {
        return Err(Error::Dataset(format!(
            "a set of {objects_per_set} has fewer than {perms} orderings"
        )));
    }
    let mut chosen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut set_list = Vec::with_capacity(sets);
    while set_list.len() < sets {
        let mut s = rand::seq::index::sample(rng, pool_size, objects_per_set).into_vec();
        s.sort_unstable();
        if chosen.insert(s.clone()) {
            set_list.push(s);
        }
    }
    let mut out = Vec::with_capacity(sets * perms);
    for (i, set) in set_list.into_iter().enumerate() {
        let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
        while seen.len() < perms {
            let mut p = set.clone();
            p.shuffle(rng);
            if seen.insert(p.clone()) {
                out.push((i, p));
            }
        }
    }
    Ok(out)
}

/// Plan sequences over `pool`; permutations of one set share object scales.
pub fn plan_sequences(pool: &ObjectPool, params: &PlanParams, root_seed: u64) -> Result<Vec<PlannedSequence>> {
    let mut rng = seed::rng(seed::stream(root_seed, Stream::Plan));
    let orders = plan_orders(pool.len(), params.sets, params.objects_per_set, params.perms_per_set, &mut rng)?;
    let mut scale_rng = seed::rng(seed::stream(root_seed, Stream::ObjectScale));
    let mut set_scales: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut out = Vec::with_capacity(orders.len());
    for (set, objects) in orders {
        let mut sorted = objects.clone();
        sorted.sort_unstable();
        for &o in &sorted {
            if let std::collections::btree_map::Entry::Vacant(e) = set_scales.entry((set, o)) {
                let s = match params.extent_range {
                    None => 1.0,
                    Some((lo, hi)) => {
                        if !(lo > 0.0 && lo <= hi) {
                            return Err(Error::InvalidParameter(format!("invalid extent range [{lo}, {hi}]")));
                        }
                        let target = if lo == hi { lo } else { scale_rng.random_range(lo..=hi) };
                        target / pool.objects[o].mesh.max_extent()
                    }
                };
                e.insert(s);
            }
        }
        let scales = objects.iter().map(|o| set_scales[&(set, *o)]).collect();
        out.push(PlannedSequence { set, objects, scales });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub format: String,
    pub version: u32,
    pub hand: String,
    pub dof: usize,
    pub os_labels: Vec<String>,
    pub root_seed: u64,
}

impl RecordHeader {
    pub fn new(hand: &HandSpec, root_seed: u64) -> Self {
        Self {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            hand: hand.name.clone(),
            dof: hand.dof(),
            os_labels: hand.os_catalog.iter().map(|o| o.label.clone()).collect(),
            root_seed,
        }
    }
}

/// One grasp of one generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub sequence: usize,
    pub objects: Vec<String>,
    pub scales: Vec<f64>,
    pub grasp: usize,
    pub os_id: usize,
    pub os_label: String,
    /// Joints moved by this grasp.
    pub mask: Vec<bool>,
    /// Position (m), 6D rotation, joint angles (rad).
    pub g: Vec<f64>,
    pub pair: (usize, usize),
    pub terms: [f64; TERM_COUNT],
    pub total: f64,
    pub verdict: ObjectVerdict,
    /// This grasp and every earlier grasp of the sequence validate.
    pub success: bool,
    /// Largest penetration (m) over the validated sequence.
    pub max_penetration: f64,
    pub retained: bool,
    pub termination: Termination,
    /// Per-sequence seed.
    pub seed: u64,
    pub wall_time_s: f64,
}

impl GraspRecord {
    pub fn config(&self) -> Result<GraspConfig> {
        GraspConfig::from_slice(&self.g)
    }
}

/// Appends length-prefixed JSON lines after a header line.
pub struct RecordWriter<W: Write> {
    inner: W,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: &RecordHeader) -> Result<Self> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(f), header)
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut inner: W, header: &RecordHeader) -> Result<Self> {
        let json = serde_json::to_string(header).map_err(|e| Error::Record(e.to_string()))?;
        writeln!(inner, "# {json}").map_err(|e| Error::io("<records>", e))?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, record: &GraspRecord) -> Result<()> {
        let json = serde_json::to_string(record).map_err(|e| Error::Record(e.to_string()))?;
        writeln!(self.inner, "{} {json}", json.len()).map_err(|e| Error::io("<records>", e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io("<records>", e))
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

#[derive(Debug, Clone, Default)]
pub struct RecordFile {
    /// `None` for an empty file.
    pub header: Option<RecordHeader>,
    pub records: Vec<GraspRecord>,
    /// A truncated last record was dropped.
    pub skipped_tail: bool,
}

fn parse_record_line(line: &str) -> Option<GraspRecord> {
    let (len, json) = line.split_once(' ')?;
    if len.parse::<usize>().ok()? != json.len() {
        return None;
    }
    serde_json::from_str(json).ok()
}

pub fn parse_records(text: &str) -> Result<RecordFile> {
    let mut out = RecordFile::default();
    if text.is_empty() {
        return Ok(out);
    }
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let header = lines[0]
        .strip_prefix("# ")
        .ok_or_else(|| Error::Record("missing header line".into()))?;
    let header: RecordHeader = serde_json::from_str(header).map_err(|e| Error::Record(format!("bad header: {e}")))?;
    if header.format != RECORD_FORMAT || header.version != RECORD_VERSION {
        return Err(Error::Record(format!(
            "unsupported record format {} v{}",
            header.format, header.version
        )));
    }
    out.header = Some(header);
    let n = lines.len();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let last = i + 1 == n;
        match parse_record_line(line) {
            Some(r) if !(last && !complete) => out.records.push(r),
            _ if last => {
                log::warn!("skipping truncated record at line {}", i + 1);
                out.skipped_tail = true;
            }
            _ => return Err(Error::Record(format!("malformed record at line {}", i + 1))),
        }
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<RecordFile> {
    let path = path.as_ref();
    let mut text = String::new();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    loop {
        let n = r.read_line(&mut text).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
    }
    parse_records(&text)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sequences: usize,
    /// Sequences that errored before producing records.
    pub errors: usize,
    pub grasps: usize,
    pub successful_grasps: usize,
    /// Sequences whose every grasp validated.
    pub successful_sequences: usize,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sequences            {}", self.sequences)?;
        writeln!(f, "sequence errors      {}", self.errors)?;
        writeln!(f, "grasps               {}", self.grasps)?;
        writeln!(f, "successful grasps    {}", self.successful_grasps)?;
        write!(f, "successful sequences {}", self.successful_sequences)
    }
}

fn sequence_records(
    index: usize,
    plan: &PlannedSequence,
    pool: &ObjectPool,
    hand: &Arc<HandSpec>,
    params: &SequenceParams,
    root_seed: u64,
) -> Result<Vec<GraspRecord>> {
    let start = Instant::now();
    let sseed = seed::sequence_seed(root_seed, index);
    let objects = instantiate(pool, &plan.objects, &plan.scales, sseed);
    let result = seqgrasp(hand, &objects, params, sseed)?;
    let grasps: Vec<SequenceGrasp> = result
        .steps
        .iter()
        .map(|s| SequenceGrasp {
            os: &hand.os_catalog[s.os_id],
            mask: &s.mask,
            g: &s.g,
        })
        .collect();
    let report = validate_sequence(hand, &grasps, &objects[..grasps.len()], &params.validation)?;
    let wall = start.elapsed().as_secs_f64();
    let ids: Vec<String> = objects.iter().map(|o| o.id.clone()).collect();
    let mut prefix = true;
    Ok(result
        .steps
        .iter()
        .zip(report.objects)
        .enumerate()
        .map(|(n, (s, verdict))| {
            prefix &= verdict.success();
            GraspRecord {
                sequence: index,
                objects: ids.clone(),
                scales: plan.scales.clone(),
                grasp: n,
                os_id: s.os_id,
                os_label: s.label.clone(),
                mask: s.mask.clone(),
                g: s.g.to_vec(),
                pair: s.pair,
                terms: s.breakdown.terms,
                total: s.breakdown.total,
                verdict,
                success: prefix,
                max_penetration: report.max_penetration,
                retained: prefix,
                termination: result.termination,
                seed: sseed,
                wall_time_s: wall,
            }
        })
        .collect())
}

/// Scene objects for one sequence; surface samples depend on the slot.
pub fn instantiate(pool: &ObjectPool, objects: &[usize], scales: &[f64], sequence_seed: u64) -> Vec<SceneObject> {
    objects
        .iter()
        .zip(scales)
        .enumerate()
        .map(|(slot, (&o, &s))| pool.instance(o, s, seed::derive(sequence_seed, slot as u64)))
        .collect()
}

/// Run every planned sequence and append its records to `out`.
///
/// Sequences run in parallel; one writer appends their records in plan
/// order, so a failed run leaves a valid prefix on disk.
pub fn generate<W: Write + Send>(
    plan: &[PlannedSequence],
    pool: &ObjectPool,
    hand: &Arc<HandSpec>,
    params: &SequenceParams,
    root_seed: u64,
    out: &mut RecordWriter<W>,
) -> Result<RunSummary> {
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<GraspRecord>>)>();
    std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> Result<RunSummary> {
            let mut summary = RunSummary {
                sequences: plan.len(),
                ..Default::default()
            };
            let mut pending: BTreeMap<usize, Result<Vec<GraspRecord>>> = BTreeMap::new();
            let mut next = 0;
            for (i, r) in rx {
                pending.insert(i, r);
                while let Some(r) = pending.remove(&next) {
                    match r {
                        Ok(records) => {
                            for rec in &records {
                                out.append(rec)?;
                            }
                            out.flush()?;
                            summary.grasps += records.len();
                            summary.successful_grasps += records.iter().filter(|r| r.success).count();
                            summary.successful_sequences +=
                                (!records.is_empty() && records.iter().all(|r| r.success)) as usize;
                        }
                        Err(e) => {
                            log::warn!("sequence {next} failed: {e}");
                            summary.errors += 1;
                        }
                    }
                    log::info!("sequence {}/{} done", next + 1, plan.len());
                    next += 1;
                }
            }
            out.flush()?;
            Ok(summary)
        });
        plan.par_iter().enumerate().for_each_with(tx, |tx, (i, p)| {
            let r = sequence_records(i, p, pool, hand, params, root_seed);
            let _ = tx.send((i, r));
        });
        writer.join().expect("record writer panicked")
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevalidationSummary {
    pub sequences: usize,
    pub grasps: usize,
    pub passed: usize,
    pub failed: usize,
    /// Grasps whose recomputed verdict differs from the stored one.
    pub mismatched: usize,
    /// Sequences skipped because an object is not in the pool.
    pub skipped_sequences: usize,
}

/// Re-run validation for every sequence in `records` and compare with the
/// stored verdicts.
pub fn revalidate(
    records: &[GraspRecord],
    pool: &ObjectPool,
    hand: &Arc<HandSpec>,
    params: &ValidationParams,
) -> Result<RevalidationSummary> {
    let mut groups: BTreeMap<(usize, u64), Vec<&GraspRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.sequence, r.seed)).or_default().push(r);
    }
    let results: Vec<Result<Option<(usize, usize, usize)>>> = groups
        .par_iter()
        .map(|(_, group)| {
            let mut group = group.clone();
            group.sort_by_key(|r| r.grasp);
            let first = group[0];
            let Some(indices) = first.objects.iter().map(|id| pool.index_of(id)).collect::<Option<Vec<_>>>() else {
                log::warn!("sequence {}: object missing from pool", first.sequence);
                return Ok(None);
            };
            if group.iter().enumerate().any(|(i, r)| r.grasp != i) || group.len() > indices.len() {
                return Err(Error::Record(format!("sequence {} has a gap in its grasps", first.sequence)));
            }
            let objects = instantiate(pool, &indices, &first.scales, first.seed);
            let configs = group.iter().map(|r| r.config()).collect::<Result<Vec<_>>>()?;
            let mut grasps = Vec::with_capacity(group.len());
            for (r, g) in group.iter().zip(&configs) {
                let os = hand
                    .os_catalog
                    .get(r.os_id)
                    .ok_or_else(|| Error::Record(format!("unknown opposition space {}", r.os_id)))?;
                grasps.push(SequenceGrasp { os, mask: &r.mask, g });
            }
            let report = validate_sequence(hand, &grasps, &objects[..grasps.len()], params)?;
            let (mut passed, mut mismatched) = (0, 0);
            let mut prefix = true;
            for (r, v) in group.iter().zip(&report.objects) {
                prefix &= v.success();
                passed += prefix as usize;
                mismatched += (prefix != r.success) as usize;
            }
            Ok(Some((group.len(), passed, mismatched)))
        })
        .collect();
    let mut s = RevalidationSummary::default();
    for r in results {
        match r? {
            Some((n, passed, mismatched)) => {
                s.sequences += 1;
                s.grasps += n;
                s.passed += passed;
                s.failed += n - passed;
                s.mismatched += mismatched;
            }
            None => s.skipped_sequences += 1,
        }
    }
    Ok(s)
}

pub fn rate_percent(success: f64, total: f64) -> f64 {
    if total == 0.0 {
        0.0
    } else {
        100.0 * success / total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub label: String,
    pub success: usize,
    pub total: usize,
    pub rate: f64,
}

impl RateRow {
    fn new(label: impl Into<String>, success: usize, total: usize) -> Self {
        Self {
            label: label.into(),
            success,
            total,
            rate: rate_percent(success as f64, total as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub empty: bool,
    /// Per opposition space: successful grasps over attempted grasps.
    pub per_os: Vec<RateRow>,
    /// Per sequence length n: sequences whose first n grasps all validated,
    /// over all sequences.
    pub per_length: Vec<RateRow>,
    pub overall: RateRow,
    /// Mean of `diversity`.
    pub mean_std: f64,
    /// Per-dimension population standard deviation of g over successes.
    pub diversity: Vec<f64>,
}

pub fn per_dimension_std(vectors: &[&[f64]]) -> Vec<f64> {
    let Some(first) = vectors.first() else {
        return Vec::new();
    };
    let n = vectors.len() as f64;
    (0..first.len())
        .map(|d| {
            let mean = vectors.iter().map(|v| v[d]).sum::<f64>() / n;
            (vectors.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Aggregate records into the per-OS and per-length tables.
pub fn stats(records: &[GraspRecord]) -> DatasetStats {
    let mut os: BTreeMap<(usize, String), (usize, usize)> = BTreeMap::new();
    let mut sequences: BTreeMap<(usize, u64), Vec<&GraspRecord>> = BTreeMap::new();
    for r in records {
        let e = os.entry((r.os_id, r.os_label.clone())).or_default();
        e.0 += r.success as usize;
        e.1 += 1;
        sequences.entry((r.sequence, r.seed)).or_default().push(r);
    }
    let max_len = sequences.values().map(|s| s.len()).max().unwrap_or(0);
    let per_length = (1..=max_len)
        .map(|n| {
            let consumed = sequences
                .values()
                .filter(|s| s.iter().filter(|r| r.grasp < n && r.success).count() >= n)
                .count();
            RateRow::new(n.to_string(), consumed, sequences.len())
        })
        .collect();
    let successes: Vec<&[f64]> = records.iter().filter(|r| r.success).map(|r| r.g.as_slice()).collect();
    let dim = successes.first().map_or(0, |g| g.len());
    let same_dim: Vec<&[f64]> = successes.iter().copied().filter(|g| g.len() == dim).collect();
    let diversity = per_dimension_std(&same_dim);
    let mean_std = if diversity.is_empty() {
        0.0
    } else {
        diversity.iter().sum::<f64>() / diversity.len() as f64
    };
    DatasetStats {
        empty: records.is_empty(),
        per_os: os.into_iter().map(|((_, l), (s, t))| RateRow::new(l, s, t)).collect(),
        per_length,
        overall: RateRow::new("all", successes.len(), records.len()),
        mean_std,
        diversity,
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.empty {
            return write!(f, "no records");
        }
        writeln!(f, "{:<16} {:>10} {:>10} {:>9}", "opposition", "success", "total", "rate %")?;
        for r in &self.per_os {
            writeln!(f, "{:<16} {:>10} {:>10} {:>9.2}", r.label, r.success, r.total, r.rate)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<16} {:>10} {:>10} {:>9}", "objects", "consumed", "total", "rate %")?;
        for r in &self.per_length {
            writeln!(f, "{:<16} {:>10} {:>10} {:>9.2}", r.label, r.success, r.total, r.rate)?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "{:<16} {:>10} {:>10} {:>9.2}",
            "overall", self.overall.success, self.overall.total, self.overall.rate
        )?;
        write!(f, "diversity (mean std of g): {:.6}", self.mean_std)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_objects: usize,
    pub test_objects: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub format: String,
    pub version: u32,
    pub bps_size: usize,
    pub num_os: usize,
    pub dof: usize,
    pub os_labels: Vec<String>,
    /// Column groups after `split,object_id`: bps, one-hot, selection, g.
    pub columns: Vec<(String, usize)>,
}

impl ExportHeader {
    pub fn new(hand: &HandSpec, bps_size: usize) -> Self {
        let d = 9 + hand.dof();
        Self {
            format: EXPORT_FORMAT.into(),
            version: EXPORT_VERSION,
            bps_size,
            num_os: hand.os_catalog.len(),
            dof: hand.dof(),
            os_labels: hand.os_catalog.iter().map(|o| o.label.clone()).collect(),
            columns: vec![
                ("bps".into(), bps_size),
                ("os_onehot".into(), hand.os_catalog.len()),
                ("selection".into(), d),
                ("g".into(), d),
            ],
        }
    }

    /// Numeric values per row.
    pub fn row_width(&self) -> usize {
        self.columns.iter().map(|c| c.1).sum()
    }
}

/// Deterministic surface cloud: farthest points among vertices and face centroids.
pub fn object_cloud(mesh: &TriMesh, n: usize) -> Result<PointCloud> {
    let mut cands = mesh.vertices.clone();
    cands.extend(mesh.triangles.iter().map(|t| (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0));
    let idx = farthest_point_indices(&cands, n.min(cands.len()), 0);
    PointCloud::new(idx.into_iter().map(|i| cands[i]).collect())
}

/// Split object ids into train and test sets, `TRAIN_FRACTION` of them in train.
pub fn split_objects(ids: &BTreeSet<String>, seed: u64) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut v: Vec<&String> = ids.iter().collect();
    v.shuffle(&mut seed::rng(seed::stream(seed, Stream::Split)));
    let n = v.len();
    let mut n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let train = v[..n_train].iter().map(|s| (*s).clone()).collect();
    let test = v[n_train..].iter().map(|s| (*s).clone()).collect();
    (train, test)
}

/// Write retained records as diffusion training rows
/// `split,object_id,bps...,onehot...,selection...,g...`.
pub fn export_diffusion_set<W: Write>(
    records: &[GraspRecord],
    pool: &ObjectPool,
    hand: &HandSpec,
    basis: &[nalgebra::Vector3<f64>],
    split_seed: u64,
    out: &mut W,
) -> Result<ExportSummary> {
    let retained: Vec<&GraspRecord> = records.iter().filter(|r| r.retained).collect();
    if retained.is_empty() {
        return Err(Error::Dataset("no successful records to export".into()));
    }
    let header = ExportHeader::new(hand, basis.len());
    let ids: BTreeSet<String> = retained.iter().filter_map(|r| r.objects.get(r.grasp).cloned()).collect();
    let (train, _) = split_objects(&ids, split_seed);
    let io = |e| Error::io("<export>", e);
    writeln!(out, "# {}", serde_json::to_string(&header).map_err(|e| Error::Dataset(e.to_string()))?).map_err(io)?;
    let mut features: HashMap<(String, u64), Vec<f64>> = HashMap::new();
    let mut summary = ExportSummary::default();
    let mut used_train = BTreeSet::new();
    let mut used_test = BTreeSet::new();
    for r in retained {
        let Some(id) = r.objects.get(r.grasp) else {
            summary.skipped += 1;
            continue;
        };
        let Some(index) = pool.index_of(id) else {
            log::warn!("object {id} not found; skipping record");
            summary.skipped += 1;
            continue;
        };
        if r.g.len() != 9 + hand.dof() || r.mask.len() != hand.dof() || r.os_id >= hand.os_catalog.len() {
            log::warn!("record {}:{} does not match hand {}; skipping", r.sequence, r.grasp, hand.name);
            summary.skipped += 1;
            continue;
        }
        let scale = r.scales[r.grasp];
        let key = (id.clone(), scale.to_bits());
        if !features.contains_key(&key) {
            let o = &pool.objects[index];
            let mesh = if scale == 1.0 { (*o.mesh).clone() } else { o.mesh.scaled(scale) };
            let f = bps_encode(&object_cloud(&mesh, BPS_CLOUD_SIZE)?, basis).values;
            features.insert(key.clone(), f);
        }
        let is_train = train.contains(id);
        let mut row = String::new();
        row.push_str(if is_train { "train," } else { "test," });
        row.push_str(&id.replace(',', "_"));
        let mut push = |v: f64| {
            row.push(',');
            row.push_str(&v.to_string());
        };
        features[&key].iter().for_each(|&v| push(v));
        (0..hand.os_catalog.len()).for_each(|l| push((l == r.os_id) as u8 as f64));
        (0..9).for_each(|_| push(1.0));
        r.mask.iter().for_each(|&m| push(m as u8 as f64));
        r.g.iter().for_each(|&v| push(v));
        writeln!(out, "{row}").map_err(io)?;
        summary.rows += 1;
        if is_train {
            summary.train_rows += 1;
            used_train.insert(id.clone());
        } else {
            summary.test_rows += 1;
            used_test.insert(id.clone());
        }
    }
    summary.train_objects = used_train.len();
    summary.test_objects = used_test.len();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::builtin;
    use crate::validation::ObjectVerdict;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn record(sequence: usize, grasp: usize, label: &str, success: bool) -> GraspRecord {
        GraspRecord {
            sequence,
            objects: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            scales: vec![1.0; 4],
            grasp,
            os_id: 0,
            os_label: label.into(),
            mask: vec![true; 4],
            g: vec![0.0; 13],
            pair: (0, 6),
            terms: [0.0; TERM_COUNT],
            total: 0.0,
            verdict: ObjectVerdict {
                contact_ok: success,
                contact_count: 2,
                penetration_depth: 0.0,
                penetration_ok: true,
                wrench_ok: [success; 6],
            },
            success,
            max_penetration: 0.0,
            retained: success,
            termination: Termination::AllObjectsDone,
            seed: sequence as u64,
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn plan_counts_and_uniqueness() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = plan_orders(20, 600, 4, 4, &mut rng).unwrap();
        assert_eq!(p.len(), 2400);
        let unique: BTreeSet<&Vec<usize>> = p.iter().map(|(_, o)| o).collect();
        assert_eq!(unique.len(), 2400);
        assert_eq!(plan_orders(4, 1, 4, 1, &mut rng).unwrap().len(), 1);
        assert!(plan_orders(3, 1, 4, 1, &mut rng).is_err());
        assert!(plan_orders(4, 2, 4, 1, &mut rng).is_err());
        assert!(plan_orders(4, 1, 3, 7, &mut rng).is_err());
    }

    #[test]
    fn record_round_trip_and_truncated_tail() {
        let hand = builtin::toy_gripper();
        let mut w = RecordWriter::new(Vec::new(), &RecordHeader::new(&hand, 3)).unwrap();
        let mut a = record(0, 0, "pinch", true);
        a.g[0] = 0.1 + 0.2;
        a.scales[0] = 1.0 / 3.0;
        let b = record(0, 1, "pinch", false);
        w.append(&a).unwrap();
        w.append(&b).unwrap();
        let bytes = w.into_inner();
        let text = String::from_utf8(bytes).unwrap();
        let f = parse_records(&text).unwrap();
        assert_eq!(f.records, vec![a.clone(), b]);
        assert!(!f.skipped_tail);
        let cut = &text[..text.len() - 10];
        let f = parse_records(cut).unwrap();
        assert_eq!(f.records, vec![a]);
        assert!(f.skipped_tail);
        let header_only: String = text.lines().next().unwrap().to_string() + "\n";
        let f = parse_records(&header_only).unwrap();
        assert!(f.records.is_empty() && f.header.is_some());
        assert!(parse_records("").unwrap().header.is_none());
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "12 {\"broken\":1}";
        assert!(parse_records(&(lines.join("\n") + "\n")).is_err());
    }

    #[test]
    fn table_rate_formula() {
        assert_eq!(format!("{:.2}", rate_percent(147.33, 323.31)), "45.57");
        let mut recs: Vec<GraspRecord> = (0..10).map(|i| record(i, 0, "ring-palm", i < 3)).collect();
        recs.iter_mut().for_each(|r| r.os_id = 6);
        let s = stats(&recs);
        assert_eq!(s.per_os.len(), 1);
        assert_eq!((s.per_os[0].success, s.per_os[0].total), (3, 10));
        assert_eq!(format!("{:.2}", s.per_os[0].rate), "30.00");
        assert_eq!(s.diversity, vec![0.0; 13]);
        assert_eq!(s.mean_std, 0.0);
    }

    #[test]
    fn per_length_counts_successful_prefixes() {
        let recs = vec![
            record(0, 0, "x", true),
            record(0, 1, "y", true),
            record(0, 2, "z", false),
            record(1, 0, "x", true),
            record(1, 1, "y", false),
            record(2, 0, "x", false),
        ];
        let s = stats(&recs);
        let consumed: Vec<usize> = s.per_length.iter().map(|r| r.success).collect();
        assert_eq!(consumed, vec![2, 1, 0]);
        assert!(s.per_length.iter().all(|r| r.total == 3));
    }

    #[test]
    fn empty_stats() {
        let s = stats(&[]);
        assert!(s.empty);
        assert!(s.per_os.is_empty() && s.per_length.is_empty());
        assert_eq!(s.overall.rate, 0.0);
    }

    #[test]
    fn split_is_disjoint_and_proportional() {
        let ids: BTreeSet<String> = (0..10).map(|i| format!("o{i}")).collect();
        let (train, test) = split_objects(&ids, 5);
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(train.is_disjoint(&test));
        let two: BTreeSet<String> = ["a".to_string(), "b".to_string()].into();
        let (t, v) = split_objects(&two, 1);
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn export_row_width() {
        let hand = builtin::reference_hand();
        let header = ExportHeader::new(&hand, 512);
        assert_eq!(header.row_width(), 512 + hand.os_catalog.len() + 2 * (9 + hand.dof()));
        if hand.dof() == 16 && hand.os_catalog.len() == 7 {
            assert_eq!(header.row_width(), 569);
        }
    }
}
