use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use super::time::SimTime;
use crate::error::{Error, Result};

/// Implemented by event payloads so run summaries and traces can name them.
pub trait Labeled {
    fn label(&self) -> &'static str;
}

/// Returned by [`Scheduler::schedule`]; allows cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

/// One processed event, as recorded when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub fire_at_bits: u64,
    pub seq: u64,
    pub label: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub processed: u64,
    pub by_label: BTreeMap<&'static str, u64>,
    pub end: SimTime,
}

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Priority event queue plus simulation clock.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Entry<E>>>,
    cancelled: HashSet<u64>,
    trace: Option<Vec<TraceEntry>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Record every processed event from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Enqueue `payload` to fire at `fire_at`. Scheduling in the past is a
    /// programming error and is reported as [`Error::ScheduleInPast`].
    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle> {
        if fire_at < self.now {
            return Err(Error::ScheduleInPast {
                at: fire_at.as_secs(),
                now: self.now.as_secs(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry {
            fire_at,
            seq,
            payload,
        }));
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: f64, payload: E) -> Result<EventHandle> {
        let at = self.now.after(delay);
        self.schedule(at, payload)
    }

    /// Returns false if the event already fired or was cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        let live = self.heap.iter().any(|Reverse(e)| e.seq == handle.0);
        live && self.cancelled.insert(handle.0)
    }

    /// Pops the next event with `fire_at <= end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(SimTime, E)>
    where
        E: Labeled,
    {
        loop {
            let next = self.heap.peek()?;
            if next.0.fire_at > end {
                return None;
            }
            let Reverse(entry) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.fire_at >= self.now);
            self.now = entry.fire_at;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry {
                    fire_at_bits: entry.fire_at.as_secs().to_bits(),
                    seq: entry.seq,
                    label: entry.payload.label(),
                });
            }
            return Some((entry.fire_at, entry.payload));
        }
    }

    /// Moves the clock forward to `end` (no-op if already there).
    pub fn advance_to(&mut self, end: SimTime) {
        if end > self.now {
            self.now = end;
        }
    }

    /// Processes every event with `fire_at <= end` through `handler`, then
    /// sets the clock to `end`.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Result<RunSummary>
    where
        E: Labeled,
        F: FnMut(&mut Scheduler<E>, SimTime, E) -> Result<()>,
    {
        let mut summary = RunSummary::default();
        while let Some((at, event)) = self.pop_until(end) {
            *summary.by_label.entry(event.label()).or_default() += 1;
            summary.processed += 1;
            handler(self, at, event)?;
        }
        self.advance_to(end);
        summary.end = self.now;
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    enum Ev {
        A,
        B,
        C(u32),
    }

    impl Labeled for Ev {
        fn label(&self) -> &'static str {
            match self {
                Ev::A => "a",
                Ev::B => "b",
                Ev::C(_) => "c",
            }
        }
    }

    #[test]
    fn schedules_in_future() {
        let mut s = Scheduler::new();
        s.advance_to(SimTime::from_secs(3.0));
        s.schedule(SimTime::from_secs(5.0), Ev::A).unwrap();
        let (at, ev) = s.pop_until(SimTime::from_secs(100.0)).unwrap();
        assert_eq!(at, SimTime::from_secs(5.0));
        assert_eq!(ev, Ev::A);
    }

    #[test]
    fn equal_times_are_fifo() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_secs(5.0), Ev::A).unwrap();
        s.schedule(SimTime::from_secs(5.0), Ev::B).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| s.pop_until(SimTime::from_secs(10.0)))
            .map(|(_, e)| e)
            .collect();
        assert_eq!(order, vec![Ev::A, Ev::B]);
    }

    #[test]
    fn past_schedule_is_error() {
        let mut s: Scheduler<Ev> = Scheduler::new();
        s.advance_to(SimTime::from_secs(3.0));
        let err = s.schedule(SimTime::from_secs(2.0), Ev::A).unwrap_err();
        assert!(matches!(err, Error::ScheduleInPast { .. }));
    }

    #[test]
    fn empty_run_reaches_end() {
        let mut s: Scheduler<Ev> = Scheduler::new();
        let summary = s
            .run_until(SimTime::from_secs(100.0), |_, _, _| Ok(()))
            .unwrap();
        assert_eq!(summary.processed, 0);
        assert_eq!(s.now(), SimTime::from_secs(100.0));
    }

    #[test]
    fn boundary_events_inclusive() {
        let mut s = Scheduler::new();
        for t in [1.0, 50.0, 100.0, 100.5] {
            s.schedule(SimTime::from_secs(t), Ev::A).unwrap();
        }
        let summary = s
            .run_until(SimTime::from_secs(100.0), |_, _, _| Ok(()))
            .unwrap();
        assert_eq!(summary.processed, 3);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn cancelled_events_skip() {
        let mut s = Scheduler::new();
        let h = s.schedule(SimTime::from_secs(1.0), Ev::A).unwrap();
        s.schedule(SimTime::from_secs(2.0), Ev::B).unwrap();
        assert!(s.cancel(h));
        assert!(!s.cancel(h));
        let (_, ev) = s.pop_until(SimTime::from_secs(10.0)).unwrap();
        assert_eq!(ev, Ev::B);
    }

    #[test]
    fn handlers_can_schedule_and_clock_is_monotone() {
        let mut s = Scheduler::new();
        s.enable_trace();
        s.schedule(SimTime::ZERO, Ev::C(0)).unwrap();
        let mut last = SimTime::ZERO;
        s.run_until(SimTime::from_secs(10.0), |sched, at, ev| {
            assert!(at >= last);
            last = at;
            if let Ev::C(n) = ev {
                if n < 5 {
                    sched.schedule_in(1.5, Ev::C(n + 1))?;
                    sched.schedule_in(0.0, Ev::A)?;
                }
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(s.trace().len(), 11);
    }
}
