use std::collections::BTreeSet;

use ordered_float::OrderedFloat;

pub(crate) const EPS: f64 = 1e-9;

type OpenKey = (OrderedFloat<f64>, OrderedFloat<f64>, usize);
type FocalKey = (u32, OrderedFloat<f64>, OrderedFloat<f64>, usize);

/// Open list ordered by `f` (ties: larger `g`) with a focal sublist of the
/// entries whose `f` is within `omega` of the minimum, ordered by conflicts,
/// then `f`, then larger `g`.
#[derive(Default)]
pub(crate) struct FocalQueue {
    open: BTreeSet<OpenKey>,
    focal: BTreeSet<FocalKey>,
    bound: Option<f64>,
}

impl FocalQueue {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn insert(&mut self, f: f64, g: f64, conflicts: u32, id: usize) {
        self.open.insert((OrderedFloat(f), OrderedFloat(-g), id));
        if self.bound.is_some_and(|b| f <= b) {
            self.focal
                .insert((conflicts, OrderedFloat(f), OrderedFloat(-g), id));
        }
    }

    pub(crate) fn remove(&mut self, f: f64, g: f64, conflicts: u32, id: usize) {
        self.open.remove(&(OrderedFloat(f), OrderedFloat(-g), id));
        self.focal
            .remove(&(conflicts, OrderedFloat(f), OrderedFloat(-g), id));
    }

    /// Pops the focal head and returns it with the open minimum before the pop.
    /// `conflicts_of` recovers the conflict count of entries promoted into focal.
    pub(crate) fn pop(
        &mut self,
        omega: f64,
        conflicts_of: impl Fn(usize) -> u32,
    ) -> Option<(usize, f64)> {
        let &(OrderedFloat(f_min), _, _) = self.open.first()?;
        let bound = omega * f_min + EPS * f_min.abs().max(1.0);
        if self.bound.is_none_or(|b| bound > b) {
            let lo = match self.bound {
                Some(b) => (OrderedFloat(b), OrderedFloat(f64::INFINITY), usize::MAX),
                None => (
                    OrderedFloat(f64::NEG_INFINITY),
                    OrderedFloat(f64::NEG_INFINITY),
                    0,
                ),
            };
            for &(f, ng, id) in self.open.range(lo..).take_while(|k| k.0 .0 <= bound) {
                self.focal.insert((conflicts_of(id), f, ng, id));
            }
            self.bound = Some(bound);
        }
        let head = *self.focal.first().expect("focal holds the open minimum");
        self.focal.remove(&head);
        self.open.remove(&(head.1, head.2, head.3));
        Some((head.3, f_min))
    }
}
