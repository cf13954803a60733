//! A small partitioned-dataset engine.
//!
//! A [`PDataset`] is a lazily evaluated lineage of transformations over a
//! list of partitions. Nothing runs until an [`Engine`] materializes it; the
//! engine then executes each transformation as a stage of independent
//! partition-tasks on its worker pool and records one [`TaskRecord`] per task.
//!
//! Transformations come in two flavours:
//!
//! * **narrow** (`map`, `flat_map`, `map_partitions`, `union`,
//!   `coalesce(.., false)`, `zip_with_index`): output partition `i` depends
//!   only on input partition(s) it was derived from, elements never cross
//!   partitions.
//! * **wide** (`partition_by_range`, `reduce_by_key`, `distinct`,
//!   `coalesce(.., true)`): a full exchange between a map stage and a reduce
//!   stage.
//!
//! Results never depend on the worker count: tasks write into slots indexed
//! by partition, and every exchange merges its inputs in partition order.

mod dag;
mod engine;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use dag::DagExport;
pub use engine::{run, Engine, EngineConfig};
pub use metrics::{StageSummary, TaskMetrics, TaskRecord};

use engine::Exec;

/// Element bound for everything that flows through the engine.
pub trait Data: Clone + Send + Sync + 'static {}
impl<T: Clone + Send + Sync + 'static> Data for T {}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stage {stage} failed in partition {partition}: {message}")]
    Task {
        stage: String,
        partition: usize,
        message: String,
    },
    #[error("worker panicked in stage {stage}, partition {partition}: {message}")]
    WorkerPanic {
        stage: String,
        partition: usize,
        message: String,
    },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dependency {
    Source,
    Narrow,
    Wide,
}

impl Dependency {
    pub fn as_str(self) -> &'static str {
        match self {
            Dependency::Source => "source",
            Dependency::Narrow => "narrow",
            Dependency::Wide => "wide",
        }
    }
}

static NEXT_NODE_ID: AtomicUsize = AtomicUsize::new(0);

#[derive(Debug, Clone)]
pub struct NodeMeta {
    pub id: usize,
    pub op: &'static str,
    pub dependency: Dependency,
}

impl NodeMeta {
    fn new(op: &'static str, dependency: Dependency) -> Self {
        Self {
            id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
            op,
            dependency,
        }
    }

    /// Stage label used in task metrics, e.g. `12:map_partitions`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.id, self.op)
    }
}

pub(crate) trait Lineage: Send + Sync {
    fn meta(&self) -> &NodeMeta;
    fn parents(&self) -> Vec<&dyn Lineage>;
}

pub(crate) trait Node<T>: Lineage {
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<T>>, EngineError>;
}

/// A materialized partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition<T> {
    pub index: usize,
    pub elements: Vec<T>,
}

/// Handle to a lazily evaluated partitioned dataset.
pub struct PDataset<T> {
    node: Arc<dyn Node<T>>,
}

impl<T> Clone for PDataset<T> {
    fn clone(&self) -> Self {
        Self {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T> std::fmt::Debug for PDataset<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PDataset").field("node", self.node.meta()).finish()
    }
}

type PartitionFn<T, U> = Arc<dyn Fn(Vec<T>) -> Result<Vec<U>, String> + Send + Sync>;

// ---------------------------------------------------------------------------
// Nodes

struct SourceNode<T> {
    meta: NodeMeta,
    data: Arc<Vec<Vec<T>>>,
}

impl<T: Data> Lineage for SourceNode<T> {
    fn meta(&self) -> &NodeMeta {
        &self.meta
    }
    fn parents(&self) -> Vec<&dyn Lineage> {
        Vec::new()
    }
}

impl<T: Data> Node<T> for SourceNode<T> {
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<T>>, EngineError> {
        let data = &self.data;
        exec.run_tasks(&self.meta.label(), (0..data.len()).collect(), |_, i| {
            Ok(data[i].clone())
        })
    }
}

struct MapPartitionsNode<T, U> {
    meta: NodeMeta,
    parent: PDataset<T>,
    f: PartitionFn<T, U>,
}

impl<T: Data, U: Data> Lineage for MapPartitionsNode<T, U> {
    fn meta(&self) -> &NodeMeta {
        &self.meta
    }
    fn parents(&self) -> Vec<&dyn Lineage> {
        vec![self.parent.lineage()]
    }
}

impl<T: Data, U: Data> Node<U> for MapPartitionsNode<T, U> {
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<U>>, EngineError> {
        let parts = self.parent.node.compute(exec)?;
        let f = &self.f;
        exec.run_tasks(&self.meta.label(), parts, |_, p| f(p))
    }
}

struct ZipWithIndexNode<T> {
    meta: NodeMeta,
    parent: PDataset<T>,
}

impl<T: Data> Lineage for ZipWithIndexNode<T> {
    fn meta(&self) -> &NodeMeta {
        &self.meta
    }
    fn parents(&self) -> Vec<&dyn Lineage> {
        vec![self.parent.lineage()]
    }
}

impl<T: Data> Node<(T, u64)> for ZipWithIndexNode<T> {
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<(T, u64)>>, EngineError> {
        let parts = self.parent.node.compute(exec)?;
        let mut offset = 0u64;
        let inputs: Vec<(u64, Vec<T>)> = parts
            .into_iter()
            .map(|p| {
                let start = offset;
                offset += p.len() as u64;
                (start, p)
            })
            .collect();
        exec.run_tasks(&self.meta.label(), inputs, |_, (start, p)| {
            Ok(p.into_iter().zip(start..).collect())
        })
    }
}

struct UnionNode<T> {
    meta: NodeMeta,
    left: PDataset<T>,
    right: PDataset<T>,
}

impl<T: Data> Lineage for UnionNode<T> {
    fn meta(&self) -> &NodeMeta {
        &self.meta
    }
    fn parents(&self) -> Vec<&dyn Lineage> {
        vec![self.left.lineage(), self.right.lineage()]
    }
}

impl<T: Data> Node<T> for UnionNode<T> {
    // No tasks of its own: the partition lists are simply concatenated.
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<T>>, EngineError> {
        let mut parts = self.left.node.compute(exec)?;
        parts.extend(self.right.node.compute(exec)?);
        Ok(parts)
    }
}

struct CoalesceNode<T> {
    meta: NodeMeta,
    parent: PDataset<T>,
    target: usize,
}

impl<T: Data> Lineage for CoalesceNode<T> {
    fn meta(&self) -> &NodeMeta {
        &self.meta
    }
    fn parents(&self) -> Vec<&dyn Lineage> {
        vec![self.parent.lineage()]
    }
}

/// Contiguous grouping of `n` input partitions into `min(target, n)` slots
/// whose group sizes differ by at most one.
pub(crate) fn coalesce_groups(n: usize, target: usize) -> Vec<std::ops::Range<usize>> {
    let slots = target.min(n);
    (0..slots).map(|i| (i * n / slots)..((i + 1) * n / slots)).collect()
}

impl<T: Data> Node<T> for CoalesceNode<T> {
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<T>>, EngineError> {
        let parts = self.parent.node.compute(exec)?;
        let groups = coalesce_groups(parts.len(), self.target);
        let mut iter = parts.into_iter();
        let inputs: Vec<Vec<Vec<T>>> = groups
            .iter()
            .map(|g| iter.by_ref().take(g.len()).collect())
            .collect();
        exec.run_tasks(&self.meta.label(), inputs, |_, group| {
            Ok(group.into_iter().flatten().collect())
        })
    }
}

type ExchangeFn<T, U> =
    Arc<dyn Fn(&Exec<'_>, &str, Vec<Vec<T>>) -> Result<Vec<Vec<U>>, EngineError> + Send + Sync>;

/// A wide transformation; `f` runs its own map and reduce stages.
struct ExchangeNode<T, U> {
    meta: NodeMeta,
    parent: PDataset<T>,
    f: ExchangeFn<T, U>,
}

impl<T: Data, U: Data> Lineage for ExchangeNode<T, U> {
    fn meta(&self) -> &NodeMeta {
        &self.meta
    }
    fn parents(&self) -> Vec<&dyn Lineage> {
        vec![self.parent.lineage()]
    }
}

impl<T: Data, U: Data> Node<U> for ExchangeNode<T, U> {
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<U>>, EngineError> {
        let parts = self.parent.node.compute(exec)?;
        (self.f)(exec, &self.meta.label(), parts)
    }
}

struct CacheNode<T> {
    meta: NodeMeta,
    parent: PDataset<T>,
    cell: Mutex<Option<Arc<Vec<Vec<T>>>>>,
}

impl<T: Data> Lineage for CacheNode<T> {
    fn meta(&self) -> &NodeMeta {
        &self.meta
    }
    fn parents(&self) -> Vec<&dyn Lineage> {
        vec![self.parent.lineage()]
    }
}

impl<T: Data> Node<T> for CacheNode<T> {
    fn compute(&self, exec: &Exec<'_>) -> Result<Vec<Vec<T>>, EngineError> {
        let mut cell = self.cell.lock().expect("cache lock poisoned");
        if let Some(parts) = cell.as_ref() {
            return Ok(parts.as_ref().clone());
        }
        let parts = Arc::new(self.parent.node.compute(exec)?);
        *cell = Some(Arc::clone(&parts));
        Ok(parts.as_ref().clone())
    }
}

// ---------------------------------------------------------------------------
// Exchange helpers

/// Assigns sorted distinct keys to `num` contiguous ranges of near-equal key
/// count. Returns the owning partition for each key index.
fn range_owners(key_count: usize, num: usize) -> Vec<usize> {
    let mut owners = Vec::with_capacity(key_count);
    for i in 0..num {
        let lo = i * key_count / num;
        let hi = (i + 1) * key_count / num;
        owners.extend(std::iter::repeat_n(i, hi - lo));
    }
    owners
}

/// Routes sorted runs of `(K, V)` to `num` key-range buckets. Output `i`
/// holds one run per input (in input order) with the keys owned by `i`.
fn route_by_range<K: Ord + Clone, V>(runs: Vec<Vec<(K, V)>>, num: usize) -> Vec<Vec<Vec<(K, V)>>> {
    let mut keys: Vec<K> = runs.iter().flatten().map(|(k, _)| k.clone()).collect();
    keys.sort();
    keys.dedup();
    let owners = range_owners(keys.len(), num);

    let mut out: Vec<Vec<Vec<(K, V)>>> = (0..num).map(|_| Vec::with_capacity(runs.len())).collect();
    for run in runs {
        let mut buckets: Vec<Vec<(K, V)>> = (0..num).map(|_| Vec::new()).collect();
        for (k, v) in run {
            let j = keys.binary_search(&k).expect("key collected above");
            buckets[owners[j]].push((k, v));
        }
        for (slot, bucket) in out.iter_mut().zip(buckets) {
            slot.push(bucket);
        }
    }
    out
}

fn split_mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Public API

impl<T: Data> PDataset<T> {
    fn from_node(node: impl Node<T> + 'static) -> Self {
        Self { node: Arc::new(node) }
    }

    pub(crate) fn lineage(&self) -> &dyn Lineage {
        &*self.node
    }

    /// Dataset with the given partitions, verbatim.
    pub fn from_partitions(parts: Vec<Vec<T>>) -> Self {
        Self::from_node(SourceNode {
            meta: NodeMeta::new("parallelize", Dependency::Source),
            data: Arc::new(parts),
        })
    }

    /// Splits `items` into `num_partitions` contiguous chunks of near-equal
    /// size (at least one partition).
    pub fn from_vec(items: Vec<T>, num_partitions: usize) -> Self {
        let n = items.len();
        let num = num_partitions.max(1);
        let mut iter = items.into_iter();
        let parts = (0..num)
            .map(|i| iter.by_ref().take((i + 1) * n / num - i * n / num).collect())
            .collect();
        Self::from_partitions(parts)
    }

    pub fn empty() -> Self {
        Self::from_partitions(Vec::new())
    }

    pub fn meta(&self) -> &NodeMeta {
        self.node.meta()
    }

    /// Applies `f` to the element iterator of every partition.
    pub fn map_partitions<U, I, F>(&self, f: F) -> PDataset<U>
    where
        U: Data,
        I: IntoIterator<Item = U>,
        F: Fn(std::vec::IntoIter<T>) -> I + Send + Sync + 'static,
    {
        self.narrow_map("map_partitions", move |p: Vec<T>| Ok(f(p.into_iter()).into_iter().collect()))
    }

    /// Fallible `map_partitions`: the first error aborts the job and names
    /// the failing partition.
    pub fn try_map_partitions<U, I, E, F>(&self, f: F) -> PDataset<U>
    where
        U: Data,
        I: IntoIterator<Item = U>,
        E: Display,
        F: Fn(std::vec::IntoIter<T>) -> Result<I, E> + Send + Sync + 'static,
    {
        self.narrow_map("map_partitions", move |p: Vec<T>| {
            f(p.into_iter())
                .map(|it| it.into_iter().collect())
                .map_err(|e| e.to_string())
        })
    }

    pub fn map<U, F>(&self, f: F) -> PDataset<U>
    where
        U: Data,
        F: Fn(T) -> U + Send + Sync + 'static,
    {
        self.narrow_map("map", move |p: Vec<T>| Ok(p.into_iter().map(&f).collect()))
    }

    pub fn flat_map<U, I, F>(&self, f: F) -> PDataset<U>
    where
        U: Data,
        I: IntoIterator<Item = U>,
        F: Fn(T) -> I + Send + Sync + 'static,
    {
        self.narrow_map("flat_map", move |p: Vec<T>| Ok(p.into_iter().flat_map(&f).collect()))
    }

    pub fn filter<F>(&self, f: F) -> PDataset<T>
    where
        F: Fn(&T) -> bool + Send + Sync + 'static,
    {
        self.narrow_map("filter", move |p: Vec<T>| Ok(p.into_iter().filter(|x| f(x)).collect()))
    }

    fn narrow_map<U, F>(&self, op: &'static str, f: F) -> PDataset<U>
    where
        U: Data,
        F: Fn(Vec<T>) -> Result<Vec<U>, String> + Send + Sync + 'static,
    {
        PDataset::from_node(MapPartitionsNode {
            meta: NodeMeta::new(op, Dependency::Narrow),
            parent: self.clone(),
            f: Arc::new(f),
        })
    }

    /// Pairs each element with its global position (partition order).
    pub fn zip_with_index(&self) -> PDataset<(T, u64)> {
        PDataset::from_node(ZipWithIndexNode {
            meta: NodeMeta::new("zip_with_index", Dependency::Narrow),
            parent: self.clone(),
        })
    }

    /// Partitions of `self` followed by partitions of `other`.
    pub fn union(&self, other: &PDataset<T>) -> PDataset<T> {
        PDataset::from_node(UnionNode {
            meta: NodeMeta::new("union", Dependency::Narrow),
            left: self.clone(),
            right: other.clone(),
        })
    }

    /// Reduces the partition count to `target`.
    ///
    /// Without shuffle, each output partition is the concatenation of a
    /// contiguous run of input partitions and the count cannot grow. With
    /// shuffle, elements are dealt round-robin (seeded start offset per
    /// input partition) into exactly `target` partitions.
    pub fn coalesce(&self, target: usize, shuffle: bool) -> Result<PDataset<T>, EngineError> {
        if target == 0 {
            return Err(EngineError::InvalidArgument(
                "coalesce target must be at least 1".into(),
            ));
        }
        if !shuffle {
            return Ok(PDataset::from_node(CoalesceNode {
                meta: NodeMeta::new("coalesce", Dependency::Narrow),
                parent: self.clone(),
                target,
            }));
        }
        let f = move |exec: &Exec<'_>, stage: &str, parts: Vec<Vec<T>>| {
            let seed = exec.seed;
            let dealt = exec.run_tasks(&format!("{stage}/map"), parts, |p, elems| {
                let mut buckets: Vec<Vec<T>> = (0..target).map(|_| Vec::new()).collect();
                let start = (split_mix(seed ^ p as u64) % target as u64) as usize;
                for (i, x) in elems.into_iter().enumerate() {
                    buckets[(start + i) % target].push(x);
                }
                Ok(buckets)
            })?;
            let mut routed: Vec<Vec<Vec<T>>> = (0..target).map(|_| Vec::new()).collect();
            for buckets in dealt {
                for (slot, b) in routed.iter_mut().zip(buckets) {
                    slot.push(b);
                }
            }
            exec.run_tasks(&format!("{stage}/reduce"), routed, |_, runs| {
                Ok(runs.into_iter().flatten().collect())
            })
        };
        Ok(PDataset::from_node(ExchangeNode {
            meta: NodeMeta::new("coalesce_shuffle", Dependency::Wide),
            parent: self.clone(),
            f: Arc::new(f),
        }))
    }

    /// Memoizes the materialized partitions after the first computation.
    pub fn cache(&self) -> PDataset<T> {
        PDataset::from_node(CacheNode {
            meta: NodeMeta::new("cache", Dependency::Narrow),
            parent: self.clone(),
            cell: Mutex::new(None),
        })
    }

    /// DOT dump of this dataset's lineage.
    pub fn to_dot(&self) -> String {
        let mut dag = DagExport::new();
        dag.add(self);
        dag.to_dot()
    }
}

impl<T: Data + Ord> PDataset<T> {
    /// Each distinct element exactly once, in ascending order.
    pub fn distinct(&self) -> PDataset<T> {
        self.map(|x| (x, ())).reduce_by_key(|a, _| a).keys()
    }
}

impl<K: Data + Ord, V: Data> PDataset<(K, V)> {
    /// Range-partitions by key into `num_partitions` partitions.
    ///
    /// Distinct keys are split into contiguous ranges of near-equal key
    /// count, so every key in partition `i` is `<=` every key in partition
    /// `i + 1`, and with `num_partitions` equal to the distinct key count each
    /// partition holds exactly one key. Within a partition, elements are
    /// ordered by key, then by their original position.
    pub fn partition_by_range(&self, num_partitions: usize) -> Result<PDataset<(K, V)>, EngineError> {
        if num_partitions == 0 {
            return Err(EngineError::InvalidArgument(
                "num_partitions must be at least 1".into(),
            ));
        }
        let f = move |exec: &Exec<'_>, stage: &str, parts: Vec<Vec<(K, V)>>| {
            let runs = exec.run_tasks(&format!("{stage}/map"), parts, |_, mut p| {
                p.sort_by(|a, b| a.0.cmp(&b.0));
                Ok(p)
            })?;
            let routed = route_by_range(runs, num_partitions);
            exec.run_tasks(&format!("{stage}/reduce"), routed, |_, runs| {
                let mut out: Vec<(K, V)> = runs.into_iter().flatten().collect();
                out.sort_by(|a, b| a.0.cmp(&b.0));
                Ok(out)
            })
        };
        Ok(PDataset::from_node(ExchangeNode {
            meta: NodeMeta::new("partition_by_range", Dependency::Wide),
            parent: self.clone(),
            f: Arc::new(f),
        }))
    }

    /// One pair per distinct key, values folded with `op` (map-side combine,
    /// then a merge in partition order). Output keeps the input partition
    /// count and is range-partitioned by key.
    pub fn reduce_by_key<F>(&self, op: F) -> PDataset<(K, V)>
    where
        F: Fn(V, V) -> V + Send + Sync + 'static,
    {
        let f = move |exec: &Exec<'_>, stage: &str, parts: Vec<Vec<(K, V)>>| {
            let num = parts.len().max(1);
            let fold = |acc: &mut BTreeMap<K, V>, k: K, v: V| match acc.remove(&k) {
                Some(cur) => {
                    acc.insert(k, op(cur, v));
                }
                None => {
                    acc.insert(k, v);
                }
            };
            let runs = exec.run_tasks(&format!("{stage}/map"), parts, |_, p| {
                let mut acc = BTreeMap::new();
                for (k, v) in p {
                    fold(&mut acc, k, v);
                }
                Ok(acc.into_iter().collect::<Vec<_>>())
            })?;
            let routed = route_by_range(runs, num);
            exec.run_tasks(&format!("{stage}/reduce"), routed, |_, runs| {
                let mut acc = BTreeMap::new();
                for (k, v) in runs.into_iter().flatten() {
                    fold(&mut acc, k, v);
                }
                Ok(acc.into_iter().collect())
            })
        };
        PDataset::from_node(ExchangeNode {
            meta: NodeMeta::new("reduce_by_key", Dependency::Wide),
            parent: self.clone(),
            f: Arc::new(f),
        })
    }

    pub fn keys(&self) -> PDataset<K> {
        self.narrow_map("keys", |p: Vec<(K, V)>| Ok(p.into_iter().map(|(k, _)| k).collect()))
    }

    pub fn values(&self) -> PDataset<V> {
        self.narrow_map("values", |p: Vec<(K, V)>| Ok(p.into_iter().map(|(_, v)| v).collect()))
    }
}
