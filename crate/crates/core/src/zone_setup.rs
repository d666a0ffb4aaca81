//! Distributed discovery of overlap-zone groups in `O(log P)` rounds.
//!
//! Every rank knows only the first and last global column of its own chunk.
//! The procedure:
//!
//! 1. One neighbor exchange yields `need_left` / `need_right`: whether the
//!    rank shares its first column with rank `i-1` / its last with `i+1`.
//! 2. `left_group_end` marks the highest rank of each left group. An
//!    inclusive additive scan of it numbers the zones (`right_group`), and
//!    `left_group = right_group - left_group_end`.
//! 3. A forward segmented scan over `(need_left, left_group)` counts the
//!    lower-ranked members of the left group (`procs_on_left`); a backward
//!    one over `(need_right, right_group)` counts the higher-ranked members of
//!    the right group (`procs_on_right`).
//! 4. Each rank derives its zone ranges locally and all even zones are
//!    created in one phase, all odd zones in a second.
//!
//! Rounds charged: 1 for the exchange (none when `P = 1`), `⌈log2 P⌉` per
//! scan (three scans) and `⌈log2 P⌉` per creation phase (two phases), so the
//! total is at most `SETUP_ROUNDS_PER_LOG2 * ⌈log2 P⌉ + SETUP_ROUNDS_CONSTANT`
//! and does not depend on the matrix.

use crate::comm::{ceil_log2, seg_op, Endpoint, GroupHandle, Parity, SegPair};
use crate::{Error, Result};

pub const SETUP_ROUNDS_PER_LOG2: u64 = 5;
pub const SETUP_ROUNDS_CONSTANT: u64 = 1;

/// Upper bound on the rounds [`setup`] charges to any rank.
pub fn setup_round_bound(ranks: usize) -> u64 {
    SETUP_ROUNDS_PER_LOG2 * ceil_log2(ranks) + SETUP_ROUNDS_CONSTANT
}

/// First and last global column of a rank's chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryColumns {
    pub first: usize,
    pub last: usize,
}

impl BoundaryColumns {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    pub fn of<T: crate::Scalar>(local: &crate::CscMatrix<T>) -> Option<Self> {
        Some(Self::new(local.first_col()?, local.last_col()?))
    }
}

/// The seven per-rank setup variables. `procs_on_left` is only meaningful
/// when `need_left` is set, `procs_on_right` only when `need_right` is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SetupVars {
    pub need_left: bool,
    pub need_right: bool,
    pub left_group_end: bool,
    pub right_group: usize,
    pub left_group: usize,
    pub procs_on_left: usize,
    pub procs_on_right: usize,
}

/// One zone as seen by a member rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoneRef {
    pub zone_rank: usize,
    pub column: usize,
    pub lo: usize,
    pub hi: usize,
}

impl ZoneRef {
    pub fn parity(&self) -> Parity {
        Parity::of(self.zone_rank)
    }
}

/// The zones a rank belongs to: at most one of each parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ZoneMembership {
    pub even: Option<ZoneRef>,
    pub odd: Option<ZoneRef>,
}

impl ZoneMembership {
    pub fn zones(&self) -> impl Iterator<Item = ZoneRef> {
        self.even.into_iter().chain(self.odd)
    }

    fn place(&mut self, zone: ZoneRef) -> Result<()> {
        let slot = match zone.parity() {
            Parity::Even => &mut self.even,
            Parity::Odd => &mut self.odd,
        };
        if slot.is_some() {
            return Err(Error::Consistency(format!(
                "rank holds two {:?} zones",
                zone.parity()
            )));
        }
        *slot = Some(zone);
        Ok(())
    }
}

/// Everything a rank keeps from setup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneSetup {
    pub vars: SetupVars,
    pub membership: ZoneMembership,
    pub even_group: Option<GroupHandle>,
    pub odd_group: Option<GroupHandle>,
    /// Rounds charged to this rank by the whole procedure.
    pub rounds: u64,
}

impl ZoneSetup {
    /// The group created for `zone`, if this rank is a member.
    pub fn group_for(&self, zone: &ZoneRef) -> Option<&GroupHandle> {
        match zone.parity() {
            Parity::Even => self.even_group.as_ref(),
            Parity::Odd => self.odd_group.as_ref(),
        }
    }
}

/// Step 1: `(need_left, need_right)` from one neighbor exchange. Rank 0
/// never needs its left neighbor, rank `P-1` never its right.
pub fn compute_flags(ep: &mut Endpoint, cols: BoundaryColumns) -> Result<(bool, bool)> {
    let (from_left, from_right) = ep.neighbor_exchange(cols.first, cols.last)?;
    let need_left = from_left == Some(cols.first);
    let need_right = from_right == Some(cols.last);
    Ok((need_left, need_right))
}

/// Step 2: `(left_group_end, right_group, left_group)`.
pub fn compute_group_ranks(
    ep: &mut Endpoint,
    need_left: bool,
    need_right: bool,
    cols: BoundaryColumns,
) -> Result<(bool, usize, usize)> {
    let left_group_end = need_left && (!need_right || cols.first != cols.last);
    let right_group = ep.scan_forward(i64::from(left_group_end), |a, b| a + b)?;
    let right_group = usize::try_from(right_group)
        .map_err(|_| Error::Consistency("negative group count".into()))?;
    let left_group = right_group - usize::from(left_group_end);
    Ok((left_group_end, right_group, left_group))
}

/// Step 3: `(procs_on_left, procs_on_right)` from the two segmented scans.
pub fn compute_extents(
    ep: &mut Endpoint,
    need_left: bool,
    need_right: bool,
    left_group: usize,
    right_group: usize,
) -> Result<(usize, usize)> {
    let seg = |a: &SegPair, b: &SegPair| seg_op(*a, *b);
    let left = ep.scan_forward(SegPair::new(i64::from(need_left), left_group as i64), seg)?;
    let right = ep.scan_backward(SegPair::new(i64::from(need_right), right_group as i64), seg)?;
    let count = |s: i64| {
        usize::try_from(s).map_err(|_| Error::Consistency("negative member count".into()))
    };
    // The zone's end rank carries flag 0 in the scanned direction, so the
    // inclusive count equals the number of members strictly on that side.
    Ok((count(left.s)?, count(right.s)?))
}

/// Step 4 (local): the zone ranges implied by the setup variables.
///
/// A rank with both flags whose first and last column coincide sits in the
/// middle of a single zone spanning `[i - procs_on_left, i + procs_on_right]`.
/// Otherwise the left zone is `[i - procs_on_left, i]` with rank
/// `left_group`, and the right zone `[i, i + procs_on_right]` with rank
/// `right_group`.
pub fn derive_memberships(
    vars: &SetupVars,
    rank: usize,
    ranks: usize,
    cols: BoundaryColumns,
) -> Result<ZoneMembership> {
    let span = |lo: Option<usize>, hi: usize| -> Result<(usize, usize)> {
        match lo {
            Some(lo) if hi < ranks && lo < hi => Ok((lo, hi)),
            _ => Err(Error::Consistency(format!(
                "rank {rank} derived a zone outside 0..{ranks} (procs_on_left {}, procs_on_right {})",
                vars.procs_on_left, vars.procs_on_right
            ))),
        }
    };
    let mut membership = ZoneMembership::default();
    if vars.need_left && vars.need_right && cols.first == cols.last {
        let (lo, hi) = span(
            rank.checked_sub(vars.procs_on_left),
            rank + vars.procs_on_right,
        )?;
        membership.place(ZoneRef {
            zone_rank: vars.left_group,
            column: cols.first,
            lo,
            hi,
        })?;
        return Ok(membership);
    }
    if vars.need_left {
        let (lo, hi) = span(rank.checked_sub(vars.procs_on_left), rank)?;
        membership.place(ZoneRef {
            zone_rank: vars.left_group,
            column: cols.first,
            lo,
            hi,
        })?;
    }
    if vars.need_right {
        let (lo, hi) = span(Some(rank), rank + vars.procs_on_right)?;
        membership.place(ZoneRef {
            zone_rank: vars.right_group,
            column: cols.last,
            lo,
            hi,
        })?;
    }
    Ok(membership)
}

/// Runs the full procedure on one rank. `cols` is `None` when the rank's
/// chunk is empty, which is unsupported.
pub fn setup(ep: &mut Endpoint, cols: Option<BoundaryColumns>) -> Result<ZoneSetup> {
    let cols = cols.ok_or_else(|| {
        Error::Unsupported(format!(
            "rank {} holds no nonzeros; at least as many nonzeros as ranks are required",
            ep.rank()
        ))
    })?;
    let before = ep.traffic().rounds;
    let (need_left, need_right) = compute_flags(ep, cols)?;
    let (left_group_end, right_group, left_group) =
        compute_group_ranks(ep, need_left, need_right, cols)?;
    let (procs_on_left, procs_on_right) =
        compute_extents(ep, need_left, need_right, left_group, right_group)?;
    let vars = SetupVars {
        need_left,
        need_right,
        left_group_end,
        right_group,
        left_group,
        procs_on_left,
        procs_on_right,
    };
    let membership = derive_memberships(&vars, ep.rank(), ep.size(), cols)?;
    let range = |z: Option<ZoneRef>| z.map(|z| (z.lo, z.hi));
    let (even_group, odd_group) =
        ep.create_groups_two_phase(range(membership.even), range(membership.odd))?;
    Ok(ZoneSetup {
        vars,
        membership,
        even_group,
        odd_group,
        rounds: ep.traffic().rounds - before,
    })
}
