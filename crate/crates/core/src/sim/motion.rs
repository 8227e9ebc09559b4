//! Piecewise-linear trajectories on a local planar frame (meters, ms).

pub type Xy = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub t0: i64,
    pub t1: i64,
    pub p0: Xy,
    pub p1: Xy,
}

impl Leg {
    fn at(&self, t: i64) -> Xy {
        if self.t1 <= self.t0 {
            return self.p1;
        }
        let f = (t - self.t0) as f64 / (self.t1 - self.t0) as f64;
        (self.p0.0 + (self.p1.0 - self.p0.0) * f, self.p0.1 + (self.p1.1 - self.p0.1) * f)
    }

    fn velocity(&self) -> Xy {
        if self.t1 <= self.t0 {
            return (0.0, 0.0);
        }
        let dt = (self.t1 - self.t0) as f64 / 1000.0;
        ((self.p1.0 - self.p0.0) / dt, (self.p1.1 - self.p0.1) / dt)
    }
}

/// Ordered, non-overlapping legs. Outside every leg the agent is absent,
/// unless `hold_ends` pins it to its first / last position.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    legs: Vec<Leg>,
    pub hold_ends: bool,
}

pub fn dist(a: Xy, b: Xy) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl Trajectory {
    pub fn new(hold_ends: bool) -> Self {
        Trajectory { legs: Vec::new(), hold_ends }
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn end_time(&self) -> Option<i64> {
        self.legs.last().map(|l| l.t1)
    }

    pub fn last_position(&self) -> Option<Xy> {
        self.legs.last().map(|l| l.p1)
    }

    pub fn push(&mut self, leg: Leg) {
        debug_assert!(leg.t1 >= leg.t0);
        debug_assert!(self.legs.last().is_none_or(|l| l.t1 <= leg.t0));
        self.legs.push(leg);
    }

    pub fn hold(&mut self, t0: i64, t1: i64, p: Xy) {
        if t1 > t0 {
            self.push(Leg { t0, t1, p0: p, p1: p });
        }
    }

    /// Walks `points` at `speed_mps`, shifted sideways by `offset_m` (positive
    /// = left of travel direction). Returns the arrival time.
    pub fn follow(&mut self, t_start: i64, points: &[Xy], speed_mps: f64, offset_m: f64) -> i64 {
        let mut t = t_start;
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = dist(a, b);
            if len < 1e-9 {
                continue;
            }
            let (nx, ny) = (-(b.1 - a.1) / len, (b.0 - a.0) / len);
            let shift = |p: Xy| (p.0 + nx * offset_m, p.1 + ny * offset_m);
            let dt = (len / speed_mps * 1000.0).round().max(1.0) as i64;
            self.push(Leg {
                t0: t,
                t1: t + dt,
                p0: shift(a),
                p1: shift(b),
            });
            t += dt;
        }
        t
    }

    fn leg_index(&self, t: i64) -> Option<usize> {
        let i = self.legs.partition_point(|l| l.t1 < t);
        (i < self.legs.len() && self.legs[i].t0 <= t).then_some(i)
    }

    pub fn position(&self, t: i64) -> Option<Xy> {
        if let Some(i) = self.leg_index(t) {
            return Some(self.legs[i].at(t));
        }
        if self.hold_ends {
            let first = self.legs.first()?;
            if t < first.t0 {
                return Some(first.p0);
            }
            let after = self.legs.partition_point(|l| l.t1 < t);
            // in a gap or past the end: hold the last position reached
            return Some(self.legs[after.saturating_sub(1).min(self.legs.len() - 1)].p1);
        }
        None
    }

    /// Velocity in m/s; zero while parked or outside the legs.
    pub fn velocity(&self, t: i64) -> Xy {
        match self.leg_index(t) {
            Some(i) => {
                // at a shared boundary prefer the leg that starts here
                let j = if self.legs[i].t1 == t && i + 1 < self.legs.len() && self.legs[i + 1].t0 == t {
                    i + 1
                } else {
                    i
                };
                self.legs[j].velocity()
            }
            None => (0.0, 0.0),
        }
    }

    /// Maximal intervals `[t0, t1]` during which the agent is present.
    pub fn spans(&self) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = Vec::new();
        for l in &self.legs {
            match out.last_mut() {
                Some(last) if l.t0 <= last.1 => last.1 = last.1.max(l.t1),
                _ => out.push((l.t0, l.t1)),
            }
        }
        out
    }
}
