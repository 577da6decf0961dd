use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

use super::kernel::KernelSpec;

pub type TaskId = usize;
pub type KernelId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: TaskId,
    pub kernel: KernelId,
    pub predecessors: Vec<TaskId>,
    pub successors: Vec<TaskId>,
    pub critical: bool,
}

/// Acyclic task graph. Node ids equal their index and every edge goes from
/// a lower id to a higher id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDag {
    pub nodes: Vec<TaskNode>,
    pub kernels: Vec<KernelSpec>,
    pub roots: Vec<TaskId>,
    pub dop_target: u32,
    /// Number of tasks on the longest path.
    pub critical_path_len: usize,
}

impl TaskDag {
    /// Builds a DAG from edges over `kernel_of.len()` nodes. Criticality is
    /// longest-path membership.
    pub fn from_edges(
        kernels: Vec<KernelSpec>,
        kernel_of: Vec<KernelId>,
        edges: &[(TaskId, TaskId)],
        dop_target: u32,
    ) -> Result<Self> {
        let n = kernel_of.len();
        if n == 0 {
            return Err(SimError::InvalidDag("no tasks".into()));
        }
        if let Some(&k) = kernel_of.iter().find(|&&k| k >= kernels.len()) {
            return Err(SimError::InvalidDag(format!("kernel index {k} out of range")));
        }
        let mut nodes: Vec<TaskNode> = kernel_of
            .iter()
            .enumerate()
            .map(|(id, &kernel)| TaskNode {
                id,
                kernel,
                predecessors: Vec::new(),
                successors: Vec::new(),
                critical: false,
            })
            .collect();
        for &(s, d) in edges {
            if s >= d || d >= n {
                return Err(SimError::InvalidDag(format!("edge {s}->{d} must go to a higher, existing id")));
            }
            nodes[s].successors.push(d);
            nodes[d].predecessors.push(s);
        }
        let mut dag = Self {
            roots: nodes.iter().filter(|t| t.predecessors.is_empty()).map(|t| t.id).collect(),
            nodes,
            kernels,
            dop_target,
            critical_path_len: 0,
        };
        let (depth, height) = dag.depth_and_height();
        let longest = (0..n).map(|i| depth[i] + height[i] - 1).max().unwrap();
        dag.critical_path_len = longest;
        for i in 0..n {
            dag.nodes[i].critical = depth[i] + height[i] - 1 == longest;
        }
        Ok(dag)
    }

    /// Longest path (in tasks) ending at and starting from each node.
    fn depth_and_height(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.nodes.len();
        let mut depth = vec![1usize; n];
        for i in 0..n {
            for &s in &self.nodes[i].successors {
                depth[s] = depth[s].max(depth[i] + 1);
            }
        }
        let mut height = vec![1usize; n];
        for i in (0..n).rev() {
            for &s in &self.nodes[i].successors {
                height[i] = height[i].max(height[s] + 1);
            }
        }
        (depth, height)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Initial unreleased-dependency count per task.
    pub fn dependency_counts(&self) -> Vec<usize> {
        self.nodes.iter().map(|t| t.predecessors.len()).collect()
    }

    /// Longest path in tasks, recomputed by a topological pass.
    pub fn longest_path(&self) -> usize {
        self.depth_and_height().0.into_iter().max().unwrap_or(0)
    }

    /// Total tasks over critical path length.
    pub fn dop(&self) -> f64 {
        self.len() as f64 / self.critical_path_len as f64
    }

    /// Plain-text edge list: a `# nodes` header, one `# node` line per task
    /// and one `src dst` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# nodes {}", self.nodes.len()).unwrap();
        for t in &self.nodes {
            writeln!(out, "# node {} {} {}", t.id, self.kernels[t.kernel].name, u8::from(t.critical)).unwrap();
        }
        for t in &self.nodes {
            for &s in &t.successors {
                writeln!(out, "{} {}", t.id, s).unwrap();
            }
        }
        out
    }
}

/// A root releases `dop` children; the first child of each level releases
/// the next `dop`, until `total_tasks` exist. Tasks that spawn exactly `dop`
/// children are critical; with `dop == 1` the DAG is a chain and every task
/// is critical. Each task draws its kernel uniformly from `kernels` using
/// `seed` when more than one kernel is given.
pub fn generate_synthetic_dag(dop: u32, total_tasks: usize, kernels: Vec<KernelSpec>, seed: u64) -> Result<TaskDag> {
    if dop == 0 || total_tasks == 0 {
        return Err(SimError::InvalidDag("dop and total_tasks must be >= 1".into()));
    }
    if total_tasks > 1 && dop as usize > total_tasks - 1 {
        return Err(SimError::InvalidDag(format!("dop {dop} exceeds total_tasks - 1 = {}", total_tasks - 1)));
    }
    if kernels.is_empty() {
        return Err(SimError::InvalidDag("at least one kernel required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel_of: Vec<KernelId> =
        (0..total_tasks).map(|_| if kernels.len() == 1 { 0 } else { rng.random_range(0..kernels.len()) }).collect();

    let mut nodes: Vec<TaskNode> = (0..total_tasks)
        .map(|id| TaskNode {
            id,
            kernel: kernel_of[id],
            predecessors: Vec::new(),
            successors: Vec::new(),
            critical: false,
        })
        .collect();
    let mut spawner = 0usize;
    let mut next = 1usize;
    let mut critical_path_len = 1usize;
    while next < total_tasks {
        let first = next;
        let count = (dop as usize).min(total_tasks - next);
        for child in first..first + count {
            nodes[spawner].successors.push(child);
            nodes[child].predecessors.push(spawner);
        }
        nodes[spawner].critical = count == dop as usize;
        next += count;
        critical_path_len += 1;
        spawner = first;
    }
    if dop == 1 {
        for t in &mut nodes {
            t.critical = true;
        }
    }
    Ok(TaskDag { nodes, kernels, roots: vec![0], dop_target: dop, critical_path_len })
}

/// Dense right-looking blocked LU over an `nb × nb` block grid. Kernels
/// are taken in order lu0, fwd, bdiv, bmod.
pub fn generate_blocked_lu(nb: usize, kernels: [KernelSpec; 4]) -> Result<TaskDag> {
    if nb == 0 {
        return Err(SimError::InvalidDag("block count must be >= 1".into()));
    }
    const LU0: KernelId = 0;
    const FWD: KernelId = 1;
    const BDIV: KernelId = 2;
    const BMOD: KernelId = 3;
    // Last task that wrote block (i, j).
    let mut writer: Vec<Option<TaskId>> = vec![None; nb * nb];
    let mut kernel_of = Vec::new();
    let mut edges = Vec::new();
    let mut emit = |kernel: KernelId, deps: &[Option<TaskId>], kernel_of: &mut Vec<KernelId>| {
        let id = kernel_of.len();
        kernel_of.push(kernel);
        let mut seen: Vec<TaskId> = deps.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        edges.extend(seen.into_iter().map(|d| (d, id)));
        id
    };
    for k in 0..nb {
        let diag = emit(LU0, &[writer[k * nb + k]], &mut kernel_of);
        writer[k * nb + k] = Some(diag);
        for j in k + 1..nb {
            let t = emit(FWD, &[Some(diag), writer[k * nb + j]], &mut kernel_of);
            writer[k * nb + j] = Some(t);
        }
        for i in k + 1..nb {
            let t = emit(BDIV, &[Some(diag), writer[i * nb + k]], &mut kernel_of);
            writer[i * nb + k] = Some(t);
        }
        for i in k + 1..nb {
            for j in k + 1..nb {
                let t = emit(BMOD, &[writer[i * nb + k], writer[k * nb + j], writer[i * nb + j]], &mut kernel_of);
                writer[i * nb + j] = Some(t);
            }
        }
    }
    let mut dag = TaskDag::from_edges(kernels.to_vec(), kernel_of, &edges, 1)?;
    dag.dop_target = dag.dop().round().max(1.0) as u32;
    Ok(dag)
}
