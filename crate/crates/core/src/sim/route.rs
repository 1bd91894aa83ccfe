//! Turn-by-turn route planning on an occupancy grid.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Point2, Rect, Room};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteCommand {
    GoStraight,
    TurnLeft,
    TurnRight,
    TurnAround,
}

impl RouteCommand {
    pub fn as_str(self) -> &'static str {
        match self {
            RouteCommand::GoStraight => "go straight",
            RouteCommand::TurnLeft => "turn left",
            RouteCommand::TurnRight => "turn right",
            RouteCommand::TurnAround => "turn around",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub commands: Vec<RouteCommand>,
    /// Grid cells visited, start to goal.
    pub cells: Vec<(usize, usize)>,
    pub turns: usize,
}

impl Route {
    pub fn steps(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    pub fn text(&self) -> String {
        render_commands(&self.commands)
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

pub fn render_commands(commands: &[RouteCommand]) -> String {
    commands.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    blocked: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(room: &Room, obstacles: &[Rect], cell: f64) -> Self {
        let nx = (room.width / cell).ceil().max(1.0) as usize;
        let ny = (room.depth / cell).ceil().max(1.0) as usize;
        let mut blocked = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let rect = Rect {
                    min: Point2::new(i as f64 * cell, j as f64 * cell),
                    max: Point2::new(((i + 1) as f64 * cell).min(room.width), ((j + 1) as f64 * cell).min(room.depth)),
                };
                blocked[j * nx + i] = obstacles.iter().any(|o| o.overlaps(&rect));
            }
        }
        OccupancyGrid { cell, nx, ny, blocked }
    }

    pub fn cell_of(&self, p: Point2) -> (usize, usize) {
        let i = ((p.x / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((p.y / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }

    pub fn is_blocked(&self, (i, j): (usize, usize)) -> bool {
        self.blocked[j * self.nx + i]
    }

    fn step(&self, (i, j): (usize, usize), dir: u8) -> Option<(usize, usize)> {
        match dir {
            0 if i + 1 < self.nx => Some((i + 1, j)),
            1 if j + 1 < self.ny => Some((i, j + 1)),
            2 if i > 0 => Some((i - 1, j)),
            3 if j > 0 => Some((i, j - 1)),
            _ => None,
        }
    }
}

/// Grid direction (0 = +x, 1 = +y, 2 = -x, 3 = -y) closest to `from -> to`;
/// ties go to the x axis.
pub fn axis_direction(from: Point2, to: Point2) -> u8 {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx.abs() >= dy.abs() {
        if dx >= 0.0 {
            0
        } else {
            2
        }
    } else if dy >= 0.0 {
        1
    } else {
        3
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Action {
    Forward,
    Turn(i8),
}

/// Shortest route on the grid from `start` (initially facing `facing`) to
/// `goal`, minimizing grid steps first and quarter turns second.
///
/// Start and goal cells are treated as free. `None` when unreachable.
pub fn plan_route(grid: &OccupancyGrid, start: Point2, facing: Point2, goal: Point2) -> Option<Route> {
    let start_cell = grid.cell_of(start);
    let goal_cell = grid.cell_of(goal);
    let start_dir = axis_direction(start, facing);
    let free = |c: (usize, usize)| c == start_cell || c == goal_cell || !grid.is_blocked(c);

    type State = ((usize, usize), u8);
    let mut best: BTreeMap<State, (usize, usize)> = BTreeMap::new();
    let mut previous: BTreeMap<State, (State, Action)> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    best.insert((start_cell, start_dir), (0, 0));
    heap.push(Reverse((0usize, 0usize, start_cell, start_dir)));

    let mut reached = None;
    while let Some(Reverse((steps, turns, cell, dir))) = heap.pop() {
        if best.get(&(cell, dir)) != Some(&(steps, turns)) {
            continue;
        }
        if cell == goal_cell {
            reached = Some((cell, dir));
            break;
        }
        let mut moves: Vec<(State, (usize, usize), Action)> = Vec::with_capacity(4);
        if let Some(next) = grid.step(cell, dir).filter(|&c| free(c)) {
            moves.push(((next, dir), (steps + 1, turns), Action::Forward));
        }
        for (delta, cost) in [(1i8, 1usize), (-1, 1), (2, 2)] {
            let nd = ((dir as i8 + delta).rem_euclid(4)) as u8;
            moves.push(((cell, nd), (steps, turns + cost), Action::Turn(delta)));
        }
        for (state, cost, action) in moves {
            if best.get(&state).is_none_or(|&c| cost < c) {
                best.insert(state, cost);
                previous.insert(state, ((cell, dir), action));
                heap.push(Reverse((cost.0, cost.1, state.0, state.1)));
            }
        }
    }

    let end = reached?;
    let mut actions = Vec::new();
    let mut cells = vec![end.0];
    let mut cursor = end;
    while let Some(&(prior, action)) = previous.get(&cursor) {
        actions.push(action);
        if action == Action::Forward {
            cells.push(prior.0);
        }
        cursor = prior;
    }
    actions.reverse();
    cells.reverse();

    let mut commands = Vec::new();
    let mut pending_turn = 0i8;
    let mut turns = 0usize;
    for action in actions {
        match action {
            Action::Turn(delta) => pending_turn += delta,
            Action::Forward => {
                match pending_turn.rem_euclid(4) {
                    1 => commands.push(RouteCommand::TurnLeft),
                    2 => commands.push(RouteCommand::TurnAround),
                    3 => commands.push(RouteCommand::TurnRight),
                    _ => {}
                }
                turns += match pending_turn.rem_euclid(4) {
                    0 => 0,
                    2 => 2,
                    _ => 1,
                };
                pending_turn = 0;
                if commands.last() != Some(&RouteCommand::GoStraight) {
                    commands.push(RouteCommand::GoStraight);
                }
            }
        }
    }
    Some(Route { commands, cells, turns })
}
