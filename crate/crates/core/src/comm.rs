//! In-process message-passing harness.
//!
//! [`run_ranks`] starts one thread per logical rank and hands each an
//! [`Endpoint`]. Every cross-rank interaction is a blocking collective over a
//! [`GroupHandle`]: members deposit their contribution in a shared slot and
//! the last member to arrive combines all contributions in rank order. The
//! result therefore never depends on thread scheduling, and floating-point
//! reductions are bit-identical across members and runs.
//!
//! Cost is accounted in communication rounds rather than wall-clock time.
//! The conventions, per participating rank, are:
//!
//! | operation                    | rounds charged                       |
//! |------------------------------|--------------------------------------|
//! | neighbor exchange            | 1 (0 when `P = 1`)                   |
//! | allreduce over `g` members   | `2 ⌈log2 g⌉` (tree reduce + broadcast) |
//! | inclusive scan over `P`      | `⌈log2 P⌉` (Kogge-Stone steps)       |
//! | group creation phase         | `⌈log2 P⌉` (world-wide split)         |
//!
//! A collective that can never complete (every live rank blocked, or a
//! member already returned) aborts the whole run with
//! [`CommError::Deadlock`].

use std::any::Any;
use std::collections::HashMap;
use std::sync::Arc;
use std::thread;

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::Scalar;

const RANK_STACK_BYTES: usize = 512 * 1024;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CommError {
    #[error("harness needs at least one rank")]
    NoRanks,

    #[error("deadlock: {0}")]
    Deadlock(String),

    #[error("collective mismatch on {group}: rank {rank} entered {got} while others entered {expected}")]
    Mismatch {
        group: String,
        rank: usize,
        expected: &'static str,
        got: &'static str,
    },

    #[error("allreduce buffer length mismatch: rank {rank} sent {got} values, rank {first} sent {expected}")]
    LengthMismatch {
        first: usize,
        expected: usize,
        rank: usize,
        got: usize,
    },

    #[error("inconsistent group ranges: {0}")]
    InconsistentGroups(String),

    #[error("rank {rank} is not a member of {group}")]
    NotAMember { rank: usize, group: String },

    #[error("rank {0} panicked")]
    RankPanicked(usize),
}

/// Operand of the segmented addition scan: a running sum `s` tagged with a
/// segment id `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SegPair {
    pub s: i64,
    pub k: i64,
}

impl SegPair {
    pub fn new(s: i64, k: i64) -> Self {
        Self { s, k }
    }
}

/// `(s, k) ∘ (t, l)` is `(s + t, l)` when `k = l` and `(t, l)` otherwise.
///
/// Not commutative. Associative on any sequence whose keys never return to
/// an earlier value (each key occupies one contiguous run), which holds for
/// group ranks along the rank order; `(1,0), (1,1), (1,0)` is a
/// counterexample outside that domain.
pub fn seg_op(a: SegPair, b: SegPair) -> SegPair {
    if a.k == b.k {
        SegPair::new(a.s + b.s, b.k)
    } else {
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(zone_rank: usize) -> Self {
        if zone_rank.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// A contiguous range of ranks `[lo, hi]` that can run collectives together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupHandle {
    lo: usize,
    hi: usize,
    context: u64,
    parity: Option<Parity>,
}

impl GroupHandle {
    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, rank: usize) -> bool {
        (self.lo..=self.hi).contains(&rank)
    }

    pub fn parity(&self) -> Option<Parity> {
        self.parity
    }

    fn label(&self) -> String {
        format!("group [{}, {}] (context {})", self.lo, self.hi, self.context)
    }
}

/// Per-rank communication counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Traffic {
    pub rounds: u64,
    pub messages: u64,
    pub scalars_sent: u64,
    /// Collective phases entered, of any kind.
    pub collectives: u64,
    pub neighbor_exchanges: u64,
    pub world_allreduces: u64,
    pub world_allreduce_scalars: u64,
    pub group_allreduces: u64,
    pub group_allreduce_scalars: u64,
    pub scans: u64,
    pub group_creation_phases: u64,
}

impl Traffic {
    /// Counter increments since an earlier snapshot.
    pub fn since(&self, earlier: &Traffic) -> Traffic {
        Traffic {
            rounds: self.rounds - earlier.rounds,
            messages: self.messages - earlier.messages,
            scalars_sent: self.scalars_sent - earlier.scalars_sent,
            collectives: self.collectives - earlier.collectives,
            neighbor_exchanges: self.neighbor_exchanges - earlier.neighbor_exchanges,
            world_allreduces: self.world_allreduces - earlier.world_allreduces,
            world_allreduce_scalars: self.world_allreduce_scalars
                - earlier.world_allreduce_scalars,
            group_allreduces: self.group_allreduces - earlier.group_allreduces,
            group_allreduce_scalars: self.group_allreduce_scalars
                - earlier.group_allreduce_scalars,
            scans: self.scans - earlier.scans,
            group_creation_phases: self.group_creation_phases - earlier.group_creation_phases,
        }
    }
}

/// `⌈log2 n⌉`, with `ceil_log2(0) = ceil_log2(1) = 0`.
pub fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(usize::BITS - (n - 1).leading_zeros())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cost {
    rounds: u64,
    messages: u64,
    scalars: u64,
}

type Boxed = Box<dyn Any + Send>;
type SlotKey = (u64, usize, usize, u64);

struct Slot {
    kind: &'static str,
    arrived: Vec<bool>,
    arrivals: usize,
    contributions: Vec<Option<Boxed>>,
    results: Option<Vec<Option<Boxed>>>,
    taken: usize,
}

struct State {
    slots: HashMap<SlotKey, Slot>,
    blocked: usize,
    finished: Vec<bool>,
    finished_count: usize,
    poison: Option<CommError>,
}

struct Shared {
    size: usize,
    state: Mutex<State>,
    wake: Condvar,
}

impl Shared {
    fn new(size: usize) -> Self {
        Self {
            size,
            state: Mutex::new(State {
                slots: HashMap::new(),
                blocked: 0,
                finished: vec![false; size],
                finished_count: 0,
                poison: None,
            }),
            wake: Condvar::new(),
        }
    }

    fn poison(&self, state: &mut State, err: CommError) -> CommError {
        if state.poison.is_none() {
            state.poison = Some(err.clone());
        }
        self.wake.notify_all();
        err
    }
}

struct FinishGuard {
    shared: Arc<Shared>,
    rank: usize,
}

impl Drop for FinishGuard {
    fn drop(&mut self) {
        let mut st = self.shared.state.lock();
        st.finished[self.rank] = true;
        st.finished_count += 1;
        self.shared.wake.notify_all();
    }
}

/// One rank's view of the harness. Confined to the rank's thread.
pub struct Endpoint {
    rank: usize,
    size: usize,
    shared: Arc<Shared>,
    sequence: HashMap<(u64, usize, usize), u64>,
    next_context: u64,
    traffic: Traffic,
    harness_failed: bool,
}

impl Endpoint {
    fn new(rank: usize, shared: Arc<Shared>) -> Self {
        Self {
            rank,
            size: shared.size,
            shared,
            sequence: HashMap::new(),
            next_context: 1,
            traffic: Traffic::default(),
            harness_failed: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn traffic(&self) -> &Traffic {
        &self.traffic
    }

    /// The group of all ranks.
    pub fn world(&self) -> GroupHandle {
        GroupHandle {
            lo: 0,
            hi: self.size - 1,
            context: 0,
            parity: None,
        }
    }

    fn is_world(&self, group: &GroupHandle) -> bool {
        group.context == 0 && group.lo == 0 && group.hi == self.size - 1
    }

    fn charge(&mut self, cost: Cost) {
        self.traffic.rounds += cost.rounds;
        self.traffic.messages += cost.messages;
        self.traffic.scalars_sent += cost.scalars;
        self.traffic.collectives += 1;
    }

    /// Core rendezvous. `combine` runs once, on whichever member arrives
    /// last, and receives the contributions ordered by rank. It returns one
    /// output per member, in the same order.
    fn collective<V, O, F>(
        &mut self,
        group: &GroupHandle,
        kind: &'static str,
        value: V,
        combine: F,
    ) -> Result<(O, Cost), CommError>
    where
        V: Send + 'static,
        O: Send + 'static,
        F: FnOnce(Vec<V>) -> Result<Vec<(O, Cost)>, CommError>,
    {
        let out = self.collective_inner(group, kind, value, combine);
        if out.is_err() {
            self.harness_failed = true;
        }
        out
    }

    fn collective_inner<V, O, F>(
        &mut self,
        group: &GroupHandle,
        kind: &'static str,
        value: V,
        combine: F,
    ) -> Result<(O, Cost), CommError>
    where
        V: Send + 'static,
        O: Send + 'static,
        F: FnOnce(Vec<V>) -> Result<Vec<(O, Cost)>, CommError>,
    {
        if !group.contains(self.rank) || group.hi >= self.size {
            return Err(CommError::NotAMember {
                rank: self.rank,
                group: group.label(),
            });
        }
        let seq = self
            .sequence
            .entry((group.context, group.lo, group.hi))
            .or_insert(0);
        let key = (group.context, group.lo, group.hi, *seq);
        *seq += 1;
        let pos = self.rank - group.lo;
        let members = group.len();
        let shared = Arc::clone(&self.shared);

        let mut st = shared.state.lock();
        if let Some(err) = &st.poison {
            return Err(err.clone());
        }
        let state = &mut *st;
        let slot = state.slots.entry(key).or_insert_with(|| Slot {
            kind,
            arrived: vec![false; members],
            arrivals: 0,
            contributions: (0..members).map(|_| None).collect(),
            results: None,
            taken: 0,
        });
        if slot.kind != kind {
            let err = CommError::Mismatch {
                group: group.label(),
                rank: self.rank,
                expected: slot.kind,
                got: kind,
            };
            return Err(shared.poison(state, err));
        }
        slot.arrived[pos] = true;
        slot.arrivals += 1;
        slot.contributions[pos] = Some(Box::new(value));

        if slot.arrivals == members {
            let values: Vec<V> = slot
                .contributions
                .iter_mut()
                .map(|c| {
                    *c.take()
                        .expect("every member contributed")
                        .downcast::<V>()
                        .expect("collective kinds match, so payload types match")
                })
                .collect();
            match combine(values) {
                Ok(outs) => {
                    slot.results = Some(
                        outs.into_iter()
                            .map(|o| Some(Box::new(o) as Boxed))
                            .collect(),
                    );
                    // Waiting members are released here, not when they wake.
                    state.blocked -= members - 1;
                    shared.wake.notify_all();
                }
                Err(err) => return Err(shared.poison(state, err)),
            }
        } else {
            st.blocked += 1;
            loop {
                if let Some(err) = self.check_wait(&st, &key, group, kind) {
                    return Err(shared.poison(&mut st, err));
                }
                if st.slots[&key].results.is_some() {
                    break;
                }
                if let Some(err) = &st.poison {
                    return Err(err.clone());
                }
                shared.wake.wait(&mut st);
            }
        }

        let slot = st.slots.get_mut(&key).expect("slot lives until all members take");
        let mine = slot.results.as_mut().expect("results ready")[pos]
            .take()
            .expect("each member takes its result once");
        slot.taken += 1;
        if slot.taken == members {
            st.slots.remove(&key);
        }
        drop(st);
        let (out, cost) = *mine
            .downcast::<(O, Cost)>()
            .expect("result type fixed by the combiner");
        Ok((out, cost))
    }

    fn check_wait(
        &self,
        st: &State,
        key: &SlotKey,
        group: &GroupHandle,
        kind: &'static str,
    ) -> Option<CommError> {
        let slot = &st.slots[key];
        if slot.results.is_some() || st.poison.is_some() {
            return None;
        }
        if let Some(gone) =
            (group.lo..=group.hi).find(|&r| st.finished[r] && !slot.arrived[r - group.lo])
        {
            return Some(CommError::Deadlock(format!(
                "rank {gone} returned without entering {kind} on {}",
                group.label()
            )));
        }
        if st.blocked + st.finished_count == self.size {
            return Some(CommError::Deadlock(format!(
                "every live rank is blocked; rank {} waits in {kind} on {}",
                self.rank,
                group.label()
            )));
        }
        None
    }

    /// Sends `to_left` to rank `i-1` and `to_right` to rank `i+1`, returning
    /// `(from_left, from_right)`. Absent neighbors yield `None`.
    pub fn neighbor_exchange<V>(
        &mut self,
        to_left: V,
        to_right: V,
    ) -> Result<(Option<V>, Option<V>), CommError>
    where
        V: Clone + Send + 'static,
    {
        let world = self.world();
        let size = self.size;
        let ((from_left, from_right), cost) =
            self.collective(&world, "neighbor_exchange", (to_left, to_right), |vals| {
                Ok((0..size)
                    .map(|i| {
                        let from_left = i.checked_sub(1).map(|l| vals[l].1.clone());
                        let from_right = vals.get(i + 1).map(|r| r.0.clone());
                        let sends = u64::from(i > 0) + u64::from(i + 1 < size);
                        let cost = Cost {
                            rounds: u64::from(size > 1),
                            messages: sends,
                            scalars: sends,
                        };
                        ((from_left, from_right), cost)
                    })
                    .collect())
            })?;
        self.charge(cost);
        self.traffic.neighbor_exchanges += 1;
        Ok((from_left, from_right))
    }

    /// Element-wise sum over the group. Partial sums are combined by a
    /// binary tree over members in ascending rank order, so every member
    /// receives the same bits.
    pub fn allreduce_sum<T: Scalar>(
        &mut self,
        group: &GroupHandle,
        buffer: &[T],
    ) -> Result<Vec<T>, CommError> {
        let lo = group.lo;
        let len = buffer.len();
        let (sum, cost) = self.collective(group, "allreduce_sum", buffer.to_vec(), |vals| {
            for (pos, v) in vals.iter().enumerate() {
                if v.len() != vals[0].len() {
                    return Err(CommError::LengthMismatch {
                        first: lo,
                        expected: vals[0].len(),
                        rank: lo + pos,
                        got: v.len(),
                    });
                }
            }
            let members = vals.len();
            let sum = tree_sum(vals);
            let rounds = 2 * ceil_log2(members);
            Ok((0..members)
                .map(|pos| {
                    let messages = tree_messages(pos, members);
                    let cost = Cost {
                        rounds,
                        messages,
                        scalars: messages * sum.len() as u64,
                    };
                    (sum.clone(), cost)
                })
                .collect())
        })?;
        self.charge(cost);
        if self.is_world(group) {
            self.traffic.world_allreduces += 1;
            self.traffic.world_allreduce_scalars += len as u64;
        } else {
            self.traffic.group_allreduces += 1;
            self.traffic.group_allreduce_scalars += len as u64;
        }
        Ok(sum)
    }

    /// Inclusive forward scan over all ranks: rank `i` receives
    /// `v_0 op v_1 op … op v_i`. `op` must be associative.
    pub fn scan_forward<V, F>(&mut self, value: V, op: F) -> Result<V, CommError>
    where
        V: Clone + Send + 'static,
        F: Fn(&V, &V) -> V,
    {
        self.scan(value, op, false)
    }

    /// Inclusive backward scan: rank `i` receives
    /// `v_{P-1} op … op v_{i+1} op v_i`.
    pub fn scan_backward<V, F>(&mut self, value: V, op: F) -> Result<V, CommError>
    where
        V: Clone + Send + 'static,
        F: Fn(&V, &V) -> V,
    {
        self.scan(value, op, true)
    }

    fn scan<V, F>(&mut self, value: V, op: F, backward: bool) -> Result<V, CommError>
    where
        V: Clone + Send + 'static,
        F: Fn(&V, &V) -> V,
    {
        let world = self.world();
        let kind = if backward { "scan_backward" } else { "scan_forward" };
        let (out, cost) = self.collective(&world, kind, value, |mut vals| {
            if backward {
                vals.reverse();
            }
            let (mut scanned, mut costs) = kogge_stone(vals, &op);
            if backward {
                scanned.reverse();
                costs.reverse();
            }
            Ok(scanned.into_iter().zip(costs).collect())
        })?;
        self.charge(cost);
        self.traffic.scans += 1;
        Ok(out)
    }

    /// Creates all even-parity groups in one phase, then all odd-parity
    /// groups in a second phase. Every rank must call this, passing the
    /// range of the even and odd group it belongs to, if any. All members
    /// of a group must pass the same range.
    pub fn create_groups_two_phase(
        &mut self,
        even: Option<(usize, usize)>,
        odd: Option<(usize, usize)>,
    ) -> Result<(Option<GroupHandle>, Option<GroupHandle>), CommError> {
        let even = self.create_groups_phase(even, Parity::Even)?;
        let odd = self.create_groups_phase(odd, Parity::Odd)?;
        Ok((even, odd))
    }

    fn create_groups_phase(
        &mut self,
        range: Option<(usize, usize)>,
        parity: Parity,
    ) -> Result<Option<GroupHandle>, CommError> {
        let world = self.world();
        let context = self.next_context;
        self.next_context += 1;
        let size = self.size;
        let (handle, cost) = self.collective(&world, "create_groups", range, |ranges| {
            for (rank, r) in ranges.iter().enumerate() {
                let Some((lo, hi)) = *r else { continue };
                if !(lo <= rank && rank <= hi && hi < size) {
                    return Err(CommError::InconsistentGroups(format!(
                        "rank {rank} asked for range [{lo}, {hi}] that does not contain it"
                    )));
                }
                if let Some(other) = (lo..=hi).find(|&j| ranges[j] != Some((lo, hi))) {
                    return Err(CommError::InconsistentGroups(format!(
                        "rank {rank} asked for [{lo}, {hi}] but rank {other} asked for {:?}",
                        ranges[other]
                    )));
                }
            }
            // A world-wide split: every rank pays the world depth.
            let rounds = ceil_log2(size);
            Ok(ranges
                .iter()
                .map(|r| {
                    let handle = r.map(|(lo, hi)| GroupHandle {
                        lo,
                        hi,
                        context,
                        parity: Some(parity),
                    });
                    let messages = r.map_or(0, |(lo, hi)| ceil_log2(hi - lo + 1));
                    let cost = Cost {
                        rounds,
                        messages,
                        scalars: messages,
                    };
                    (handle, cost)
                })
                .collect())
        })?;
        self.charge(cost);
        self.traffic.group_creation_phases += 1;
        Ok(handle)
    }
}

/// Pairwise tree reduction: level by level, partial `2i` absorbs `2i+1`.
fn tree_sum<T: Scalar>(mut level: Vec<Vec<T>>) -> Vec<T> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(mut left) = it.next() {
            if let Some(right) = it.next() {
                for (a, b) in left.iter_mut().zip(right) {
                    *a += b;
                }
            }
            next.push(left);
        }
        level = next;
    }
    level.pop().unwrap_or_default()
}

/// Messages sent by member `pos` in the tree reduce plus the mirrored
/// broadcast: one upward send (except the root) and one downward send per
/// child absorbed during the reduce.
fn tree_messages(pos: usize, members: usize) -> u64 {
    let mut children = 0;
    let mut stride = 1;
    while stride < members {
        if pos.is_multiple_of(2 * stride) && pos + stride < members {
            children += 1;
        }
        stride *= 2;
    }
    u64::from(pos != 0) + children
}

/// Hillis-Steele / Kogge-Stone inclusive scan. Step `d` combines each
/// element with the one `2^d` positions to its left.
fn kogge_stone<V: Clone, F: Fn(&V, &V) -> V>(mut vals: Vec<V>, op: &F) -> (Vec<V>, Vec<Cost>) {
    let n = vals.len();
    let mut costs = vec![Cost::default(); n];
    let mut dist = 1;
    while dist < n {
        let prev = vals.clone();
        for i in dist..n {
            vals[i] = op(&prev[i - dist], &prev[i]);
        }
        for (i, c) in costs.iter_mut().enumerate() {
            c.rounds += 1;
            if i + dist < n {
                c.messages += 1;
                c.scalars += 1;
            }
        }
        dist *= 2;
    }
    (vals, costs)
}

/// Runs `program` once per rank on a fresh harness and collects the results
/// in rank order.
///
/// If any rank fails, the error returned is the one from the lowest rank
/// whose failure did not originate in the harness (for example a
/// validation error that made the rank leave early); otherwise the lowest
/// rank's harness error.
pub fn run_ranks<R, E, F>(size: usize, program: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: From<CommError> + Send,
    F: Fn(&mut Endpoint) -> Result<R, E> + Sync,
{
    if size == 0 {
        return Err(CommError::NoRanks.into());
    }
    let shared = Arc::new(Shared::new(size));
    let program = &program;
    let outcomes: Vec<thread::Result<(Result<R, E>, bool)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let shared = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .stack_size(RANK_STACK_BYTES)
                    .spawn_scoped(s, move || {
                        let _guard = FinishGuard {
                            shared: Arc::clone(&shared),
                            rank,
                        };
                        let mut ep = Endpoint::new(rank, shared);
                        let out = program(&mut ep);
                        (out, ep.harness_failed)
                    })
                    .expect("spawn rank thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });

    let mut results = Vec::with_capacity(size);
    let mut own_error = None;
    let mut harness_error = None;
    for (rank, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((Ok(r), _)) => results.push(r),
            Ok((Err(e), true)) => {
                harness_error.get_or_insert(e);
            }
            Ok((Err(e), false)) => {
                own_error.get_or_insert(e);
            }
            Err(_) => {
                own_error.get_or_insert(CommError::RankPanicked(rank).into());
            }
        }
    }
    match own_error.or(harness_error) {
        Some(e) => Err(e),
        None => Ok(results),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn add(a: &i64, b: &i64) -> i64 {
        a + b
    }

    fn seg(a: &SegPair, b: &SegPair) -> SegPair {
        seg_op(*a, *b)
    }

    #[test]
    fn single_rank() {
        let out: Vec<usize> = run_ranks(1, |ep| Ok::<_, CommError>(ep.rank())).unwrap();
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn zero_ranks_rejected() {
        let out = run_ranks(0, |_| Ok::<_, CommError>(()));
        assert_eq!(out.unwrap_err(), CommError::NoRanks);
    }

    #[test]
    fn neighbor_exchange_pairs() {
        let out = run_ranks(2, |ep| ep.neighbor_exchange(ep.rank(), ep.rank())).unwrap();
        assert_eq!(out, vec![(None, Some(1)), (Some(0), None)]);
        let one = run_ranks(1, |ep| ep.neighbor_exchange(7, 7)).unwrap();
        assert_eq!(one, vec![(None, None)]);
    }

    #[test]
    fn neighbor_exchange_is_one_round() {
        let out = run_ranks(5, |ep| {
            ep.neighbor_exchange(0u8, 0u8)?;
            Ok::<_, CommError>(ep.traffic().clone())
        })
        .unwrap();
        assert!(out.iter().all(|t| t.rounds == 1));
        assert_eq!(out[0].messages, 1);
        assert_eq!(out[2].messages, 2);
        let single = run_ranks(1, |ep| {
            ep.neighbor_exchange(0u8, 0u8)?;
            Ok::<_, CommError>(ep.traffic().clone())
        })
        .unwrap();
        assert_eq!((single[0].rounds, single[0].messages), (0, 0));
    }

    #[test]
    fn allreduce_cases() {
        let out = run_ranks(2, |ep| {
            let g = ep.world();
            let v = [2.0 - ep.rank() as f64];
            ep.allreduce_sum(&g, &v)
        })
        .unwrap();
        assert_eq!(out, vec![vec![3.0], vec![3.0]]);
        let single = run_ranks(1, |ep| {
            let g = ep.world();
            ep.allreduce_sum(&g, &[1.5, -2.0])
        })
        .unwrap();
        assert_eq!(single, vec![vec![1.5, -2.0]]);
    }

    #[test]
    fn allreduce_is_bit_identical_and_tree_ordered() {
        let vals: [f64; 7] = [1e16, 1.0, -1e16, 1.0, 3.0, 1e-3, 7.0];
        let out = run_ranks(7, |ep| {
            let g = ep.world();
            ep.allreduce_sum(&g, &[vals[ep.rank()]])
        })
        .unwrap();
        let expected: f64 = ((1e16 + 1.0) + (-1e16 + 1.0)) + ((3.0 + 1e-3) + 7.0);
        for r in &out {
            assert_eq!(r[0].to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn allreduce_length_mismatch_fails() {
        let out = run_ranks(3, |ep| {
            let g = ep.world();
            let buf = vec![1.0; 2 + ep.rank() / 2];
            ep.allreduce_sum(&g, &buf)
        });
        assert!(matches!(out, Err(CommError::LengthMismatch { .. })));
    }

    #[test]
    fn mismatched_collectives_fail() {
        let out = run_ranks(3, |ep| {
            if ep.rank() == 1 {
                ep.scan_forward(1i64, add).map(|_| ())
            } else {
                let g = ep.world();
                ep.allreduce_sum(&g, &[1.0]).map(|_| ())
            }
        });
        assert!(matches!(out, Err(CommError::Mismatch { .. })));
    }

    #[test]
    fn missing_member_is_a_deadlock() {
        let out = run_ranks(4, |ep| {
            if ep.rank() == 3 {
                return Ok(());
            }
            let g = ep.world();
            ep.allreduce_sum(&g, &[1.0]).map(|_| ())
        });
        assert!(matches!(out, Err(CommError::Deadlock(_))));
    }

    #[test]
    fn cyclic_wait_is_a_deadlock() {
        // Ranks 0 and 2 wait on the world, rank 1 waits on {1, 2}.
        let out = run_ranks(3, |ep| {
            let g = if ep.rank() == 1 {
                ep.create_groups_two_phase(Some((1, 2)), None)?.0.unwrap()
            } else if ep.rank() == 2 {
                ep.create_groups_two_phase(Some((1, 2)), None)?;
                ep.world()
            } else {
                ep.create_groups_two_phase(None, None)?;
                ep.world()
            };
            ep.allreduce_sum(&g, &[1.0]).map(|_| ())
        });
        assert!(matches!(out, Err(CommError::Deadlock(_))), "{out:?}");
    }

    #[test]
    fn own_error_wins_over_induced_deadlock() {
        #[derive(Debug)]
        enum E {
            Comm,
            Validation,
        }
        impl From<CommError> for E {
            fn from(_: CommError) -> Self {
                E::Comm
            }
        }
        let out = run_ranks(3, |ep| {
            if ep.rank() == 2 {
                return Err(E::Validation);
            }
            let g = ep.world();
            ep.allreduce_sum(&g, &[1.0])?;
            Ok(())
        });
        assert!(matches!(out, Err(E::Validation)));
    }

    #[test]
    fn panicking_rank_reported() {
        let out = run_ranks(2, |ep| {
            if ep.rank() == 1 {
                panic!("boom");
            }
            let g = ep.world();
            ep.allreduce_sum(&g, &[1.0]).map(|_| ())
        });
        assert_eq!(out.unwrap_err(), CommError::RankPanicked(1));
    }

    #[test]
    fn seg_op_branches() {
        assert_eq!(seg_op(SegPair::new(2, 1), SegPair::new(3, 1)), SegPair::new(5, 1));
        assert_eq!(seg_op(SegPair::new(2, 1), SegPair::new(3, 2)), SegPair::new(3, 2));
        let (a, b, c) = (SegPair::new(1, 0), SegPair::new(1, 0), SegPair::new(2, 1));
        assert_eq!(seg_op(seg_op(a, b), c), SegPair::new(2, 1));
        assert_eq!(seg_op(a, seg_op(b, c)), SegPair::new(2, 1));
    }

    #[test]
    fn seg_op_associative_exhaustive() {
        let dom: Vec<SegPair> = (-2..=2)
            .flat_map(|s| (0..3).map(move |k| SegPair::new(s, k)))
            .collect();
        for &a in &dom {
            for &b in &dom {
                for &c in &dom {
                    // Keys form contiguous runs unless a.k == c.k != b.k.
                    if a.k != c.k || b.k == a.k {
                        assert_eq!(seg_op(seg_op(a, b), c), seg_op(a, seg_op(b, c)));
                    }
                }
            }
        }
    }

    #[test]
    fn seg_op_not_associative_across_interleaved_keys() {
        let (a, b, c) = (SegPair::new(1, 0), SegPair::new(1, 1), SegPair::new(1, 0));
        assert_eq!(seg_op(seg_op(a, b), c), SegPair::new(1, 0));
        assert_eq!(seg_op(a, seg_op(b, c)), SegPair::new(2, 0));
    }

    #[test]
    fn additive_scan_of_group_ends() {
        let flags = [0i64, 1, 0, 0, 1, 1, 0];
        let out = run_ranks(7, |ep| ep.scan_forward(flags[ep.rank()], add)).unwrap();
        assert_eq!(out, vec![0, 1, 1, 1, 2, 3, 3]);
    }

    #[test]
    fn segmented_scans_on_worked_example() {
        let need_left = [0, 1, 0, 1, 1, 1, 0];
        let left_group = [0, 0, 1, 1, 1, 2, 3];
        let need_right = [1, 0, 1, 1, 1, 0, 0];
        let right_group = [0, 1, 1, 1, 2, 3, 3];
        let out = run_ranks(7, |ep| {
            let r = ep.rank();
            let fwd = ep.scan_forward(SegPair::new(need_left[r], left_group[r]), seg)?;
            let bwd = ep.scan_backward(SegPair::new(need_right[r], right_group[r]), seg)?;
            Ok::<_, CommError>((fwd.s, bwd.s))
        })
        .unwrap();
        let (left, right): (Vec<i64>, Vec<i64>) = out.into_iter().unzip();
        assert_eq!(left, vec![0, 1, 0, 1, 2, 1, 0]);
        assert_eq!(right, vec![1, 2, 2, 1, 1, 0, 0]);
    }

    #[test]
    fn scan_rounds_are_logarithmic() {
        for p in [1usize, 2, 3, 7, 8, 9, 33] {
            let out = run_ranks(p, |ep| {
                ep.scan_forward(1i64, add)?;
                Ok::<_, CommError>(ep.traffic().rounds)
            })
            .unwrap();
            assert!(out.iter().all(|&r| r == ceil_log2(p)), "P={p}");
        }
    }

    #[test]
    fn ceil_log2_values() {
        let got: Vec<u64> = [0, 1, 2, 3, 4, 5, 8, 9, 1024, 1025].iter().map(|&n| ceil_log2(n)).collect();
        assert_eq!(got, vec![0, 0, 1, 2, 2, 3, 3, 4, 10, 11]);
    }

    #[test]
    fn two_phase_groups_on_worked_example() {
        let even = [Some((0, 1)), Some((0, 1)), None, None, Some((4, 5)), Some((4, 5)), None];
        let odd = [None, None, Some((2, 4)), Some((2, 4)), Some((2, 4)), None, None];
        let out = run_ranks(7, |ep| {
            let r = ep.rank();
            let (e, o) = ep.create_groups_two_phase(even[r], odd[r])?;
            Ok::<_, CommError>((e.map(|g| (g.lo(), g.hi(), g.parity())), o.map(|g| (g.lo(), g.hi(), g.parity()))))
        })
        .unwrap();
        assert_eq!(out[4], (Some((4, 5, Some(Parity::Even))), Some((2, 4, Some(Parity::Odd)))));
        assert_eq!(out[0].0, Some((0, 1, Some(Parity::Even))));
        assert_eq!(out[6], (None, None));
    }

    #[test]
    fn zone_groups_reduce_independently() {
        let even = [Some((0, 1)), Some((0, 1)), None, None, Some((4, 5)), Some((4, 5)), None];
        let odd = [None, None, Some((2, 4)), Some((2, 4)), Some((2, 4)), None, None];
        let out = run_ranks(7, |ep| {
            let r = ep.rank();
            let (e, o) = ep.create_groups_two_phase(even[r], odd[r])?;
            let mut sums = Vec::new();
            if let Some(g) = e {
                sums.push(ep.allreduce_sum(&g, &[r as f64])?[0]);
            }
            if let Some(g) = o {
                sums.push(ep.allreduce_sum(&g, &[r as f64])?[0]);
            }
            Ok::<_, CommError>(sums)
        })
        .unwrap();
        assert_eq!(out[0], vec![1.0]);
        assert_eq!(out[3], vec![9.0]);
        assert_eq!(out[4], vec![9.0, 9.0]);
        assert_eq!(out[5], vec![9.0]);
        assert!(out[6].is_empty());
    }

    #[test]
    fn inconsistent_group_ranges_fail() {
        let out = run_ranks(3, |ep| {
            let range = if ep.rank() == 0 { Some((0, 1)) } else { Some((1, 2)) };
            ep.create_groups_two_phase(range, None)
        });
        assert!(matches!(out, Err(CommError::InconsistentGroups(_))));
    }

    #[test]
    fn no_groups_when_single_rank() {
        let out = run_ranks(1, |ep| ep.create_groups_two_phase(None, None)).unwrap();
        assert_eq!(out, vec![(None, None)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn forward_additive_scan_matches_fold(vals in proptest::collection::vec(-1000i64..1000, 1..24)) {
            let p = vals.len();
            let out = run_ranks(p, |ep| ep.scan_forward(vals[ep.rank()], add)).unwrap();
            let expected: Vec<i64> = vals.iter().scan(0, |acc, v| { *acc += v; Some(*acc) }).collect();
            prop_assert_eq!(out, expected);
        }

        #[test]
        fn backward_is_reversed_forward(pairs in proptest::collection::vec((0i64..3, 0i64..4), 1..20)) {
            let vals: Vec<SegPair> = pairs.iter().map(|&(s, k)| SegPair::new(s, k)).collect();
            let p = vals.len();
            let bwd = run_ranks(p, |ep| ep.scan_backward(vals[ep.rank()], seg)).unwrap();
            let rev: Vec<SegPair> = vals.iter().rev().copied().collect();
            let mut fwd_rev = run_ranks(p, |ep| ep.scan_forward(rev[ep.rank()], seg)).unwrap();
            fwd_rev.reverse();
            prop_assert_eq!(bwd, fwd_rev);
        }

        #[test]
        fn allreduce_matches_sequential_sum(vals in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            let p = vals.len();
            let out = run_ranks(p, |ep| { let g = ep.world(); ep.allreduce_sum(&g, &[vals[ep.rank()]]) }).unwrap();
            let seq: f64 = vals.iter().sum();
            let scale: f64 = vals.iter().map(|v| v.abs()).sum();
            for r in &out {
                prop_assert_eq!(r[0].to_bits(), out[0][0].to_bits());
                prop_assert!((r[0] - seq).abs() <= 1e-12 * scale.max(1.0));
            }
        }
    }
}
