//! Augmented AND/OR graphs and the graph network that grows one graph per
//! re-arrangement sub-task at run time.
//!
//! Each graph is a fixed six-node template: the root ("target retrieved")
//! has two alternatives. The direct-grasp arc (cost 0) is feasible only
//! when the rearrangement set is empty and the motion layer confirms the
//! grasp. The removal arc (cost 1) grasps one selected obstacle, places it
//! in a safe region, and ends in the virtual node whose completion requests
//! a network expansion against the updated world.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selection::{select_obstacles, selection_triangle};
use crate::world::{ObjectId, RobotId, WorkspaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArcId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AndOrNode {
    pub id: NodeId,
    pub label: String,
    pub solved: bool,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Unknown,
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlaceDestination {
    SafeRegion,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AbstractAction {
    Approach { target: ObjectId, offset: f64 },
    Grasp { object: ObjectId },
    Place { object: ObjectId, destination: PlaceDestination },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperArc {
    pub id: ArcId,
    pub parent: NodeId,
    pub children: Vec<NodeId>,
    pub actions: Vec<AbstractAction>,
    pub cost: f64,
    pub feasible: Feasibility,
}

/// Number of nodes in the fixed graph template; the `n` of the O(nd)
/// bound.
pub const TEMPLATE_NODES: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGraph {
    pub nodes: Vec<AndOrNode>,
    pub arcs: Vec<HyperArc>,
    pub root: NodeId,
    pub virtual_node: NodeId,
    /// Arcs whose parent is the virtual node; empty in this template, where
    /// the virtual node is a leaf child of the removal arc.
    pub virtual_arcs: BTreeSet<ArcId>,
    /// World at graph creation.
    pub snapshot: WorkspaceModel,
    /// Selected obstacles in removal order (nearest to the robot base
    /// first, ties by id).
    pub candidates: Vec<ObjectId>,
    /// Nodes examined so far, for the O(nd) accounting.
    visited: BTreeSet<NodeId>,
}

impl AugmentedGraph {
    pub fn node(&self, id: NodeId) -> &AndOrNode {
        &self.nodes[id.0 as usize]
    }

    pub fn arc(&self, id: ArcId) -> &HyperArc {
        &self.arcs[id.0 as usize]
    }

    fn arc_mut(&mut self, id: ArcId) -> &mut HyperArc {
        &mut self.arcs[id.0 as usize]
    }

    /// An arc may solve its parent only when every child is solved.
    pub fn arc_children_solved(&self, id: ArcId) -> bool {
        self.arc(id).children.iter().all(|n| self.node(*n).solved)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskGraphError {
    #[error("network depth exceeds the configured cap")]
    DepthBudgetExceeded,
    #[error("no obstacle left to remove for target {0}")]
    NothingToRemove(ObjectId),
}

/// Result of one network step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepResult {
    /// The cheapest open alternative; its actions are ready for grounding.
    NextActions { arc: ArcId, actions: Vec<AbstractAction> },
    /// The virtual node completed (or an execution failed): the network
    /// must grow a new graph against this world.
    Expand { world: WorkspaceModel, failure_retry: bool },
    Solved,
    Failed,
}

/// Verdict the feasibility callback reports for an arc.
#[derive(Debug, Clone, PartialEq)]
pub enum ArcEvaluation {
    /// All actions executed; the world snapshot after execution.
    Executed { world: WorkspaceModel },
    /// An execution was attempted and failed; the world after restoring
    /// the pre-action state.
    ExecutionFailed { world: WorkspaceModel },
    /// The caller wants the actions back without executing.
    Deferred,
    /// The arc cannot be executed (no plan, nothing to grasp).
    Infeasible,
}

/// Nearest selected obstacle to the robot base; ties by lexicographic id.
pub fn choose_obstacle(
    world: &WorkspaceModel,
    robot: &RobotId,
    target: &ObjectId,
    step: f64,
) -> Result<ObjectId, TaskGraphError> {
    ordered_candidates(world, robot, target, step)
        .into_iter()
        .next()
        .ok_or_else(|| TaskGraphError::NothingToRemove(target.clone()))
}

/// All selected obstacles in removal order.
pub fn ordered_candidates(
    world: &WorkspaceModel,
    robot: &RobotId,
    target: &ObjectId,
    step: f64,
) -> Vec<ObjectId> {
    let base = match world.robot(robot) {
        Some(r) => r.base,
        None => return Vec::new(),
    };
    let selected = select_obstacles(world, robot, target, step).unwrap_or_default();
    let mut ordered: Vec<ObjectId> = selected.into_iter().collect();
    ordered.sort_by(|a, b| {
        let da = world.object(a).map(|o| o.center.dist(&base)).unwrap_or(f64::MAX);
        let db = world.object(b).map(|o| o.center.dist(&base)).unwrap_or(f64::MAX);
        da.total_cmp(&db).then_with(|| a.cmp(b))
    });
    ordered
}

/// Builds the fixed graph template for a robot-task pair against the
/// current world.
pub fn make_initial_graph(
    world: &WorkspaceModel,
    robot: &RobotId,
    task: &ObjectId,
    step: f64,
) -> AugmentedGraph {
    let candidates = ordered_candidates(world, robot, task, step);
    // Degenerate selection geometry can pick the wedge without the grasp
    // being reachable at all; selection_triangle doubles as the check.
    let fan_ok = selection_triangle(world, robot, task, step).is_ok();

    let labels = [
        "target retrieved",
        "direct grasp feasible",
        "obstacle selected",
        "obstacle grasped",
        "obstacle placed in safe region",
        "network expansion requested",
    ];
    let nodes: Vec<AndOrNode> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| AndOrNode {
            id: NodeId(i as u32),
            label: (*l).to_string(),
            solved: false,
            terminal: if i == 0 { Terminal::None } else { Terminal::Success },
        })
        .collect();

    let direct = HyperArc {
        id: ArcId(0),
        parent: NodeId(0),
        children: vec![NodeId(1)],
        actions: vec![
            AbstractAction::Grasp { object: task.clone() },
            AbstractAction::Place {
                object: task.clone(),
                destination: PlaceDestination::Retrieval,
            },
        ],
        cost: 0.0,
        // Direct grasp requires an empty rearrangement set.
        feasible: if candidates.is_empty() && fan_ok {
            Feasibility::Unknown
        } else {
            Feasibility::No
        },
    };
    let removal = HyperArc {
        id: ArcId(1),
        parent: NodeId(0),
        children: vec![NodeId(2), NodeId(3), NodeId(4), NodeId(5)],
        actions: candidates
            .first()
            .map(|o| {
                vec![
                    AbstractAction::Grasp { object: o.clone() },
                    AbstractAction::Place {
                        object: o.clone(),
                        destination: PlaceDestination::SafeRegion,
                    },
                ]
            })
            .unwrap_or_default(),
        cost: 1.0,
        feasible: if candidates.is_empty() {
            Feasibility::No
        } else {
            Feasibility::Unknown
        },
    };
    AugmentedGraph {
        nodes,
        arcs: vec![direct, removal],
        root: NodeId(0),
        virtual_node: NodeId(5),
        virtual_arcs: BTreeSet::new(),
        snapshot: world.clone(),
        candidates,
        visited: BTreeSet::new(),
    }
}

/// Record of one applied transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub failure_retry: bool,
    pub removed: Option<ObjectId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNetwork {
    pub robot: RobotId,
    pub task: ObjectId,
    pub graphs: Vec<AugmentedGraph>,
    pub transitions: Vec<TransitionRecord>,
    pub nodes_visited: u64,
    pub depth_cap: usize,
    pub angle_step: f64,
}

impl GraphNetwork {
    pub fn new(
        world: &WorkspaceModel,
        robot: &RobotId,
        task: &ObjectId,
        angle_step: f64,
        depth_cap: usize,
    ) -> Self {
        GraphNetwork {
            robot: robot.clone(),
            task: task.clone(),
            graphs: vec![make_initial_graph(world, robot, task, angle_step)],
            transitions: Vec::new(),
            nodes_visited: 0,
            depth_cap,
            angle_step,
        }
    }

    /// Network depth d: the number of graphs.
    pub fn depth(&self) -> usize {
        self.graphs.len()
    }

    pub fn newest(&self) -> &AugmentedGraph {
        self.graphs.last().expect("network non-empty")
    }

    fn visit(&mut self, nodes: Vec<NodeId>) {
        let g = self.graphs.last_mut().expect("network non-empty");
        for n in nodes {
            if g.visited.insert(n) {
                self.nodes_visited += 1;
            }
        }
    }

    /// Evaluates the newest graph's root alternatives in ascending cost
    /// order, reporting feasibility through the callback.
    pub fn network_step<F>(&mut self, mut feasibility: F) -> StepResult
    where
        F: FnMut(&AugmentedGraph, &HyperArc) -> ArcEvaluation,
    {
        loop {
            let g = self.newest();
            if g.node(g.root).solved {
                return StepResult::Solved;
            }
            let root = g.root;
            let mut order: Vec<ArcId> = g.arcs.iter().map(|a| a.id).collect();
            order.sort_by(|a, b| g.arc(*a).cost.total_cmp(&g.arc(*b).cost));
            let candidate = order
                .into_iter()
                .find(|a| g.arc(*a).feasible != Feasibility::No);
            let Some(arc_id) = candidate else {
                return StepResult::Failed;
            };
            let arc = g.arc(arc_id).clone();
            self.visit(
                std::iter::once(root)
                    .chain(arc.children.iter().copied())
                    .collect(),
            );
            let eval = feasibility(self.newest(), &arc);
            match eval {
                ArcEvaluation::Deferred => {
                    return StepResult::NextActions {
                        arc: arc_id,
                        actions: arc.actions,
                    };
                }
                ArcEvaluation::Infeasible => {
                    self.graphs
                        .last_mut()
                        .unwrap()
                        .arc_mut(arc_id)
                        .feasible = Feasibility::No;
                    continue;
                }
                ArcEvaluation::Executed { world } => {
                    let g = self.graphs.last_mut().unwrap();
                    g.arc_mut(arc_id).feasible = Feasibility::Yes;
                    let is_virtual = g.arc(arc_id).children.contains(&g.virtual_node);
                    if is_virtual {
                        // Completing the removal sequence solves its
                        // concrete children; the virtual node is resolved
                        // by the expansion itself.
                        let children = g.arc(arc_id).children.clone();
                        let virt = g.virtual_node;
                        for c in children {
                            if c != virt {
                                g.nodes[c.0 as usize].solved = true;
                            }
                        }
                        return StepResult::Expand { world, failure_retry: false };
                    }
                    let children = g.arc(arc_id).children.clone();
                    for c in children {
                        g.nodes[c.0 as usize].solved = true;
                    }
                    debug_assert!(g.arc_children_solved(arc_id));
                    let root = g.root;
                    g.nodes[root.0 as usize].solved = true;
                    return StepResult::Solved;
                }
                ArcEvaluation::ExecutionFailed { world } => {
                    return StepResult::Expand { world, failure_retry: true };
                }
            }
        }
    }

    /// Appends a graph rebuilt against the updated world.
    pub fn expand(
        &mut self,
        world: &WorkspaceModel,
        record: TransitionRecord,
    ) -> Result<(), TaskGraphError> {
        if self.graphs.len() + 1 > self.depth_cap {
            return Err(TaskGraphError::DepthBudgetExceeded);
        }
        // The expansion resolves the previous graph's virtual node.
        let g = self.graphs.last_mut().unwrap();
        let virt = g.virtual_node;
        g.nodes[virt.0 as usize].solved = true;
        self.graphs
            .push(make_initial_graph(world, &self.robot, &self.task, self.angle_step));
        self.transitions.push(record);
        Ok(())
    }
}
