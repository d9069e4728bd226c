use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::gaussian::GaussianDensity;

/// How many of the latest per-step moments a trajectory density keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    Latest(usize),
    Full,
}

impl Window {
    pub fn keeps(&self, len: usize) -> usize {
        match *self {
            Window::Latest(l) => len.min(l),
            Window::Full => len,
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Latest(l) => write!(f, "{l}"),
            Window::Full => write!(f, "full"),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(Window::Full);
        }
        match s.parse::<usize>() {
            Ok(l) if l >= 1 => Ok(Window::Latest(l)),
            _ => Err(format!(
                "window must be a positive integer or \"full\", got {s:?}"
            )),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Window::Latest(l) => s.serialize_u64(*l as u64),
            Window::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct WindowVisitor;

        impl Visitor<'_> for WindowVisitor {
            type Value = Window;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"full\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Window, E> {
                if v == 0 {
                    return Err(E::custom("window must be at least 1"));
                }
                Ok(Window::Latest(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Window, E> {
                if v < 1 {
                    return Err(E::custom("window must be at least 1"));
                }
                Ok(Window::Latest(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Window, E> {
                v.parse().map_err(E::custom)
            }
        }

        d.deserialize_any(WindowVisitor)
    }
}

#[derive(Debug)]
struct MomentNode {
    density: GaussianDensity,
    prev: Option<Arc<MomentNode>>,
}

/// Per-step filtered moments of a trajectory, newest first.
///
/// Stored as a persistent list so that hypotheses branching from the same
/// parent share their common history.
#[derive(Debug, Clone)]
pub struct MomentHistory {
    head: Arc<MomentNode>,
    len: usize,
}

impl MomentHistory {
    pub fn new(density: GaussianDensity) -> Self {
        Self {
            head: Arc::new(MomentNode {
                density,
                prev: None,
            }),
            len: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn latest(&self) -> &GaussianDensity {
        &self.head.density
    }

    /// Appends the moments of a new time step, dropping what the window does not keep.
    pub fn push(&self, density: GaussianDensity, window: Window) -> Self {
        let len = window.keeps(self.len + 1);
        let prev = match len {
            1 => None,
            _ if len == self.len + 1 => Some(self.head.clone()),
            _ => Some(self.truncated(len - 1)),
        };
        Self {
            head: Arc::new(MomentNode { density, prev }),
            len,
        }
    }

    /// Replaces the newest moments, keeping the history.
    pub fn replace_latest(&self, density: GaussianDensity) -> Self {
        Self {
            head: Arc::new(MomentNode {
                density,
                prev: self.head.prev.clone(),
            }),
            len: self.len,
        }
    }

    fn truncated(&self, len: usize) -> Arc<MomentNode> {
        let kept: Vec<GaussianDensity> = self.iter().take(len).cloned().collect();
        let mut node: Option<Arc<MomentNode>> = None;
        for density in kept.into_iter().rev() {
            node = Some(Arc::new(MomentNode {
                density,
                prev: node,
            }));
        }
        node.expect("truncated history is non-empty")
    }

    /// Newest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &GaussianDensity> {
        let mut node = Some(&*self.head);
        std::iter::from_fn(move || {
            let n = node?;
            node = n.prev.as_deref();
            Some(&n.density)
        })
    }

    /// Oldest-first copy of the retained moments.
    pub fn to_vec(&self) -> Vec<GaussianDensity> {
        let mut v: Vec<GaussianDensity> = self.iter().cloned().collect();
        v.reverse();
        v
    }
}

/// Bernoulli density over a single trajectory.
///
/// `moments` holds the filtered moments of the latest `moments.len()` time
/// steps, ending at `last`.
#[derive(Debug, Clone)]
pub struct TrajectoryBernoulli {
    pub existence: f64,
    pub birth: usize,
    pub last: usize,
    pub moments: MomentHistory,
}

impl TrajectoryBernoulli {
    /// First time step covered by the retained moments.
    pub fn window_start(&self) -> usize {
        self.last + 1 - self.moments.len()
    }

    pub fn current(&self) -> &GaussianDensity {
        self.moments.latest()
    }
}

/// Birth time, last time and the state sequence in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub birth: usize,
    pub last: usize,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(birth: usize, states: Vec<Vec<f64>>) -> Self {
        assert!(!states.is_empty(), "a trajectory has at least one state");
        Self {
            birth,
            last: birth + states.len() - 1,
            states,
        }
    }

    pub fn from_vectors(birth: usize, states: &[DVector<f64>]) -> Self {
        Self::new(
            birth,
            states.iter().map(|s| s.iter().copied().collect()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn alive_at(&self, k: usize) -> bool {
        (self.birth..=self.last).contains(&k)
    }

    pub fn state_at(&self, k: usize) -> Option<&[f64]> {
        self.alive_at(k)
            .then(|| self.states[k - self.birth].as_slice())
    }
}
