//! Simplified PBFT among surface validators.
//!
//! Each round decides one block at the next height. Validators exchange
//! messages on a private scheduler over reliable links with fixed latency:
//!
//! 1. the primary of `(height, view)` broadcasts a pre-prepare,
//! 2. a replica that accepts it broadcasts a prepare; on a quorum of
//!    matching prepares it is *prepared* (locked on that block) and
//!    broadcasts a commit,
//! 3. on a quorum of matching commits it appends the block and broadcasts
//!    `Decided`; `f + 1` matching `Decided` messages let a lagging replica
//!    catch up.
//!
//! A view that has not decided within the timeout rotates the primary. A
//! view change carries the sender's highest prepared block; the new primary
//! waits for a quorum of them and re-proposes the highest prepared block if
//! any. A locked replica only accepts its locked block or a proposal
//! justified by a prepared view at least as recent as its lock.
//!
//! Faulty validators either stay silent or equivocate: as primary they send
//! two different blocks to the two halves of the set, as replicas they vote
//! for every hash they see.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ledger::{Hash32, LedgerBlock, TrustCommit};
use crate::error::{Error, Result};
use crate::sim::{Labeled, Scheduler, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorSet {
    pub n: usize,
    pub f: usize,
    pub quorum: usize,
}

impl ValidatorSet {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("need at least one validator".into()));
        }
        let f = (n - 1) / 3;
        // ceil((n + f + 1) / 2)
        let quorum = (n + f + 2) / 2;
        Ok(ValidatorSet { n, f, quorum })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fault {
    Honest,
    Silent,
    Equivocate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PbftParams {
    pub validators: usize,
    pub latency_s: f64,
    pub view_timeout_s: f64,
    /// Views tried before a round gives up and leaves commits pending.
    pub max_views: u64,
}

impl Default for PbftParams {
    fn default() -> Self {
        PbftParams {
            validators: 9,
            latency_s: 0.05,
            view_timeout_s: 2.0,
            max_views: 10,
        }
    }
}

#[derive(Debug, Clone)]
enum Msg {
    PrePrepare {
        view: u64,
        block: LedgerBlock,
        justify: Option<u64>,
    },
    Prepare {
        view: u64,
        hash: Hash32,
    },
    Commit {
        view: u64,
        hash: Hash32,
    },
    ViewChange {
        new_view: u64,
        prepared: Option<(u64, LedgerBlock)>,
    },
    Decided {
        block: LedgerBlock,
    },
}

#[derive(Debug)]
enum Ev {
    Deliver { from: usize, to: usize, msg: Msg },
    Timeout { validator: usize, view: u64 },
}

impl Labeled for Ev {
    fn label(&self) -> &'static str {
        match self {
            Ev::Deliver { msg, .. } => match msg {
                Msg::PrePrepare { .. } => "pre-prepare",
                Msg::Prepare { .. } => "prepare",
                Msg::Commit { .. } => "commit",
                Msg::ViewChange { .. } => "view-change",
                Msg::Decided { .. } => "decided",
            },
            Ev::Timeout { .. } => "timeout",
        }
    }
}

#[derive(Debug, Default)]
struct RoundState {
    view: u64,
    accepted: BTreeMap<u64, Hash32>,
    blocks: HashMap<Hash32, LedgerBlock>,
    prepares: HashMap<(u64, Hash32), BTreeSet<usize>>,
    commits: HashMap<(u64, Hash32), BTreeSet<usize>>,
    committed_sent: BTreeSet<u64>,
    prepared: Option<(u64, Hash32)>,
    view_changes: BTreeMap<u64, BTreeMap<usize, Option<(u64, LedgerBlock)>>>,
    proposed: BTreeSet<u64>,
    decided_votes: HashMap<Hash32, BTreeSet<usize>>,
    decided_sent: bool,
}

#[derive(Debug)]
struct Validator {
    fault: Fault,
    chain: Vec<LedgerBlock>,
    round: RoundState,
}

impl Validator {
    fn tip(&self) -> Hash32 {
        self.chain.last().map_or(Hash32::ZERO, |b| b.block_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    /// The block every honest validator appended, if the round decided.
    pub block: Option<LedgerBlock>,
    /// View in which the decision happened (0 means no view change).
    pub view: u64,
    /// Simulated seconds from round start until the last honest append.
    pub elapsed_s: f64,
    pub messages: usize,
}

pub struct Consortium {
    set: ValidatorSet,
    params: PbftParams,
    validators: Vec<Validator>,
    /// Block proposed when no validator reports a prepared one.
    fresh: Option<LedgerBlock>,
}

struct Ctx<'a> {
    sched: &'a mut Scheduler<Ev>,
    latency: f64,
    n: usize,
    messages: usize,
}

impl Ctx<'_> {
    fn broadcast(&mut self, from: usize, msg: Msg) {
        for to in 0..self.n {
            self.send(from, to, msg.clone());
        }
    }

    fn send(&mut self, from: usize, to: usize, msg: Msg) {
        self.messages += 1;
        self.sched
            .schedule_in(self.latency, Ev::Deliver { from, to, msg })
            .expect("latency is non-negative");
    }
}

impl Consortium {
    pub fn new(params: PbftParams, faults: &[Fault]) -> Result<Self> {
        let set = ValidatorSet::new(params.validators)?;
        if faults.len() != set.n {
            return Err(Error::Config(format!(
                "{} fault entries for {} validators",
                faults.len(),
                set.n
            )));
        }
        if !faults.contains(&Fault::Honest) {
            return Err(Error::Config("at least one validator must be honest".into()));
        }
        if !(params.latency_s >= 0.0 && params.view_timeout_s > 0.0) {
            return Err(Error::Config("pbft latency must be >= 0 and timeout > 0".into()));
        }
        Ok(Consortium {
            set,
            params,
            validators: faults
                .iter()
                .map(|&fault| Validator {
                    fault,
                    chain: Vec::new(),
                    round: RoundState::default(),
                })
                .collect(),
            fresh: None,
        })
    }

    pub fn all_honest(params: PbftParams) -> Result<Self> {
        let faults = vec![Fault::Honest; params.validators];
        Self::new(params, &faults)
    }

    pub fn set(&self) -> ValidatorSet {
        self.set
    }

    fn honest(&self) -> impl Iterator<Item = &Validator> {
        self.validators.iter().filter(|v| v.fault == Fault::Honest)
    }

    /// The chain as held by the first honest validator.
    pub fn chain(&self) -> &[LedgerBlock] {
        &self.honest().next().expect("an honest validator exists").chain
    }

    pub fn height(&self) -> u64 {
        self.chain().len() as u64
    }

    /// True when no two honest validators hold different blocks at any
    /// height they both have.
    pub fn honest_chains_agree(&self) -> bool {
        let chains: Vec<&Vec<LedgerBlock>> = self.honest().map(|v| &v.chain).collect();
        chains.iter().enumerate().all(|(i, a)| {
            chains[i + 1..].iter().all(|b| {
                a.iter().zip(b.iter()).all(|(x, y)| x.block_hash == y.block_hash)
            })
        })
    }

    pub fn honest_chains(&self) -> Vec<Vec<LedgerBlock>> {
        self.honest().map(|v| v.chain.clone()).collect()
    }

    fn primary(&self, height: u64, view: u64) -> usize {
        ((height + view) % self.set.n as u64) as usize
    }

    /// Runs one consensus round over `pending`, proposed at time `now`.
    pub fn pbft_round(&mut self, now: SimTime, pending: &[TrustCommit]) -> Result<RoundOutcome> {
        for c in pending {
            c.validate()?;
        }
        // Honest validators that fell behind catch up by state transfer
        // from the longest honest chain (their chains are prefixes of it).
        let longest = self
            .honest()
            .map(|v| v.chain.clone())
            .max_by_key(|c| c.len())
            .unwrap_or_default();
        for v in &mut self.validators {
            if v.chain.len() < longest.len() {
                v.chain = longest.clone();
            }
            v.round = RoundState::default();
        }
        let height = longest.len() as u64;
        let tip = longest.last().map_or(Hash32::ZERO, |b| b.block_hash);
        let fresh = LedgerBlock::seal(height, tip, now, pending.to_vec());
        self.fresh = Some(fresh.clone());

        let mut sched = Scheduler::new();
        let mut ctx = Ctx {
            sched: &mut sched,
            latency: self.params.latency_s,
            n: self.set.n,
            messages: 0,
        };
        for i in 0..self.set.n {
            ctx.sched
                .schedule_in(self.params.view_timeout_s, Ev::Timeout { validator: i, view: 0 })?;
        }
        let p0 = self.primary(height, 0);
        self.propose(&mut ctx, p0, 0, &fresh, None);

        let horizon = SimTime::from_secs(self.params.view_timeout_s * (self.params.max_views + 1) as f64);
        let mut decided_at = 0.0;
        let mut decided_view = 0;
        while let Some((at, ev)) = ctx.sched.pop_until(horizon) {
            match ev {
                Ev::Timeout { validator, view } => {
                    if view + 1 >= self.params.max_views {
                        continue;
                    }
                    self.on_timeout(&mut ctx, validator, view, height, &fresh);
                }
                Ev::Deliver { from, to, msg } => {
                    if let Some(view) = self.on_message(&mut ctx, from, to, msg, height) {
                        decided_view = decided_view.max(view);
                    }
                }
            }
            let done = self.honest().all(|v| v.chain.len() as u64 > height);
            if done {
                decided_at = at.as_secs();
                break;
            }
        }
        let messages = ctx.messages;
        if !self.honest_chains_agree() {
            return Err(Error::Ledger(format!("honest validators diverged at height {height}")));
        }
        let block = self
            .honest()
            .all(|v| v.chain.len() as u64 > height)
            .then(|| self.chain()[height as usize].clone());
        Ok(RoundOutcome {
            view: if block.is_some() { decided_view } else { 0 },
            elapsed_s: decided_at,
            block,
            messages,
        })
    }

    fn propose(
        &mut self,
        ctx: &mut Ctx<'_>,
        primary: usize,
        view: u64,
        block: &LedgerBlock,
        justify: Option<u64>,
    ) {
        let v = &mut self.validators[primary];
        if !v.round.proposed.insert(view) {
            return;
        }
        match v.fault {
            Fault::Silent => {}
            Fault::Honest => ctx.broadcast(
                primary,
                Msg::PrePrepare {
                    view,
                    block: block.clone(),
                    justify,
                },
            ),
            Fault::Equivocate => {
                let twin = LedgerBlock::seal(
                    block.height,
                    block.prev_hash,
                    block.timestamp.after(1e-3),
                    block.commits.clone(),
                );
                for to in 0..ctx.n {
                    let b = if to % 2 == 0 { block.clone() } else { twin.clone() };
                    ctx.send(primary, to, Msg::PrePrepare { view, block: b, justify });
                }
            }
        }
    }

    fn on_timeout(
        &mut self,
        ctx: &mut Ctx<'_>,
        i: usize,
        view: u64,
        height: u64,
        fresh: &LedgerBlock,
    ) {
        let timeout = self.params.view_timeout_s;
        let next_primary = self.primary(height, view + 1);
        let v = &mut self.validators[i];
        if v.chain.len() as u64 > height || v.round.view != view {
            return;
        }
        let new_view = view + 1;
        v.round.view = new_view;
        ctx.sched
            .schedule_in(
                timeout,
                Ev::Timeout {
                    validator: i,
                    view: new_view,
                },
            )
            .expect("positive timeout");
        match v.fault {
            Fault::Silent => {}
            Fault::Honest => {
                let prepared = v
                    .round
                    .prepared
                    .and_then(|(pv, h)| v.round.blocks.get(&h).map(|b| (pv, b.clone())));
                ctx.broadcast(
                    i,
                    Msg::ViewChange {
                        new_view,
                        prepared,
                    },
                );
            }
            Fault::Equivocate => {
                if next_primary == i {
                    self.propose(ctx, i, new_view, fresh, None);
                }
            }
        }
    }

    fn valid_proposal(&self, i: usize, block: &LedgerBlock, height: u64) -> bool {
        let v = &self.validators[i];
        block.height == height
            && block.prev_hash == v.tip()
            && block.compute_hash() == block.block_hash
            && block.commits.iter().all(|c| c.validate().is_ok())
    }

    /// Returns the view of a commit quorum when this message made `to`
    /// append the block.
    fn on_message(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: usize,
        to: usize,
        msg: Msg,
        height: u64,
    ) -> Option<u64> {
        let quorum = self.set.quorum;
        let f = self.set.f;
        match self.validators[to].fault {
            Fault::Silent => return None,
            Fault::Equivocate => {
                if let Msg::PrePrepare { view, block, .. } = msg {
                    let hash = block.block_hash;
                    ctx.broadcast(to, Msg::Prepare { view, hash });
                    ctx.broadcast(to, Msg::Commit { view, hash });
                }
                return None;
            }
            Fault::Honest => {}
        }
        match msg {
            Msg::PrePrepare {
                view,
                block,
                justify,
            } => {
                if from != self.primary(height, view) || !self.valid_proposal(to, &block, height) {
                    return None;
                }
                let r = &mut self.validators[to].round;
                if r.view != view || r.accepted.contains_key(&view) {
                    return None;
                }
                let hash = block.block_hash;
                if let Some((lock_view, lock_hash)) = r.prepared {
                    if hash != lock_hash && !justify.is_some_and(|j| j >= lock_view) {
                        return None;
                    }
                }
                r.accepted.insert(view, hash);
                r.blocks.insert(hash, block);
                ctx.broadcast(to, Msg::Prepare { view, hash });
                self.check_prepared(ctx, to, view, hash);
                self.check_committed(ctx, to, view, hash, height)
            }
            Msg::Prepare { view, hash } => {
                self.validators[to]
                    .round
                    .prepares
                    .entry((view, hash))
                    .or_default()
                    .insert(from);
                self.check_prepared(ctx, to, view, hash);
                None
            }
            Msg::Commit { view, hash } => {
                self.validators[to]
                    .round
                    .commits
                    .entry((view, hash))
                    .or_default()
                    .insert(from);
                self.check_committed(ctx, to, view, hash, height)
            }
            Msg::ViewChange { new_view, prepared } => {
                let is_primary = self.primary(height, new_view) == to;
                let r = &mut self.validators[to].round;
                r.view_changes.entry(new_view).or_default().insert(from, prepared);
                if !is_primary
                    || r.view != new_view
                    || r.proposed.contains(&new_view)
                {
                    return None;
                }
                let votes = &r.view_changes[&new_view];
                if votes.len() < quorum {
                    return None;
                }
                let best = votes
                    .values()
                    .flatten()
                    .max_by_key(|(pv, _)| *pv)
                    .cloned();
                let (block, justify) = match best {
                    Some((pv, b)) => (b, Some(pv)),
                    None => (self.fresh.clone()?, None),
                };
                self.propose(ctx, to, new_view, &block, justify);
                None
            }
            Msg::Decided { block } => {
                let hash = block.block_hash;
                let v = &mut self.validators[to];
                let votes = v.round.decided_votes.entry(hash).or_default();
                votes.insert(from);
                let enough = votes.len() > f;
                v.round.blocks.entry(hash).or_insert(block);
                if enough && v.chain.len() as u64 == height {
                    let b = v.round.blocks[&hash].clone();
                    if self.valid_proposal(to, &b, height) {
                        self.append(ctx, to, b);
                        return Some(self.validators[to].round.view);
                    }
                }
                None
            }
        }
    }

    fn check_prepared(&mut self, ctx: &mut Ctx<'_>, i: usize, view: u64, hash: Hash32) {
        let quorum = self.set.quorum;
        let r = &mut self.validators[i].round;
        let count = r.prepares.get(&(view, hash)).map_or(0, |s| s.len());
        if r.accepted.get(&view) == Some(&hash) && count >= quorum && r.committed_sent.insert(view) {
            if r.prepared.is_none_or(|(pv, _)| view >= pv) {
                r.prepared = Some((view, hash));
            }
            ctx.broadcast(i, Msg::Commit { view, hash });
        }
    }

    fn check_committed(
        &mut self,
        ctx: &mut Ctx<'_>,
        i: usize,
        view: u64,
        hash: Hash32,
        height: u64,
    ) -> Option<u64> {
        let quorum = self.set.quorum;
        let v = &self.validators[i];
        let count = v.round.commits.get(&(view, hash)).map_or(0, |s| s.len());
        if count < quorum || v.chain.len() as u64 != height {
            return None;
        }
        let block = v.round.blocks.get(&hash)?.clone();
        self.append(ctx, i, block);
        Some(view)
    }

    fn append(&mut self, ctx: &mut Ctx<'_>, i: usize, block: LedgerBlock) {
        let v = &mut self.validators[i];
        v.chain.push(block.clone());
        if !v.round.decided_sent {
            v.round.decided_sent = true;
            ctx.broadcast(i, Msg::Decided { block });
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::governance::ledger::{verify_chain, SecurityEvent};
    use crate::world::AgentId;

    fn pending(k: u32) -> Vec<TrustCommit> {
        vec![TrustCommit {
            agent: AgentId(k),
            interval_index: k as u64,
            tau_delta: -0.1,
            event: Some(SecurityEvent::Flagged),
            reporter: AgentId(0),
        }]
    }

    #[test]
    fn quorum_sizes() {
        let q = |n| ValidatorSet::new(n).unwrap();
        assert_eq!((q(9).f, q(9).quorum), (2, 6));
        assert_eq!((q(4).f, q(4).quorum), (1, 3));
        assert_eq!((q(1).f, q(1).quorum), (0, 1));
        assert!(ValidatorSet::new(0).is_err());
    }

    #[test]
    fn honest_round_decides_in_first_view() {
        let mut c = Consortium::all_honest(PbftParams::default()).unwrap();
        for k in 0..3 {
            let out = c.pbft_round(SimTime::from_secs(60.0 * k as f64), &pending(k)).unwrap();
            let b = out.block.expect("decided");
            assert_eq!(out.view, 0);
            assert_eq!(b.height, k as u64);
            assert_eq!(b.commits, pending(k));
            // pre-prepare, prepare, commit: three one-way latencies
            assert!((out.elapsed_s - 0.15).abs() < 1e-9, "{}", out.elapsed_s);
        }
        assert_eq!(c.height(), 3);
        assert_eq!(verify_chain(c.chain()), Ok(()));
        assert!(c.honest_chains().iter().all(|ch| ch == c.chain()));
    }

    #[test]
    fn silent_primary_forces_view_change() {
        let mut faults = vec![Fault::Honest; 9];
        faults[0] = Fault::Silent;
        let mut c = Consortium::new(PbftParams::default(), &faults).unwrap();
        let out = c.pbft_round(SimTime::ZERO, &pending(1)).unwrap();
        assert_eq!(out.view, 1);
        assert!(out.elapsed_s > 2.0);
        assert_eq!(out.block.unwrap().commits, pending(1));
    }

    #[test]
    fn equivocating_primary_cannot_split_honest_nodes() {
        let mut faults = vec![Fault::Honest; 9];
        faults[0] = Fault::Equivocate;
        faults[5] = Fault::Equivocate;
        let mut c = Consortium::new(PbftParams::default(), &faults).unwrap();
        let out = c.pbft_round(SimTime::ZERO, &pending(2)).unwrap();
        assert!(out.block.is_some());
        assert!(c.honest_chains_agree());
    }

    #[test]
    fn too_many_silent_validators_stall_without_forking() {
        let mut faults = vec![Fault::Honest; 4];
        faults[1] = Fault::Silent;
        faults[2] = Fault::Silent;
        let params = PbftParams {
            validators: 4,
            max_views: 3,
            ..PbftParams::default()
        };
        let mut c = Consortium::new(params, &faults).unwrap();
        let out = c.pbft_round(SimTime::ZERO, &pending(0)).unwrap();
        assert!(out.block.is_none());
        assert_eq!(c.height(), 0);
    }

    #[test]
    fn randomized_faults_never_diverge() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = [4usize, 7, 9][trial % 3];
            let f = (n - 1) / 3;
            let mut faults = vec![Fault::Honest; n];
            for _ in 0..rng.random_range(0..=f) {
                let i = rng.random_range(0..n);
                faults[i] = if rng.random_bool(0.5) { Fault::Silent } else { Fault::Equivocate };
            }
            let params = PbftParams {
                validators: n,
                ..PbftParams::default()
            };
            let mut c = Consortium::new(params, &faults).unwrap();
            for k in 0..4 {
                let out = c
                    .pbft_round(SimTime::from_secs(60.0 * k as f64), &pending(k))
                    .unwrap_or_else(|e| panic!("trial {trial} round {k}: {e}"));
                // at most f faults: liveness holds as well
                assert!(out.block.is_some(), "trial {trial} round {k} {faults:?}");
            }
            assert!(c.honest_chains_agree());
            assert_eq!(verify_chain(c.chain()), Ok(()));
        }
    }
}
