use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ExprError;

/// Position of a node: child indices from the root, printed slash-joined
/// (`""` is the root, `"0/2"` the first child's third child).
///
/// The derived ordering is preorder: a node sorts before its descendants.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Path(Vec<usize>);

impl Path {
    pub fn new(indices: Vec<usize>) -> Path {
        Path(indices)
    }

    pub fn root() -> Path {
        Path(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, i: usize) -> Path {
        let mut v = self.0.clone();
        v.push(i);
        Path(v)
    }

    pub fn join(&self, rel: &Path) -> Path {
        let mut v = self.0.clone();
        v.extend_from_slice(&rel.0);
        Path(v)
    }

    pub fn parent(&self) -> Option<Path> {
        if self.0.is_empty() {
            None
        } else {
            Some(Path(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// True when `self` is `other` or one of its ancestors.
    pub fn is_prefix_of(&self, other: &Path) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{idx}")?;
        }
        Ok(())
    }
}

impl FromStr for Path {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(Path::root());
        }
        s.split('/')
            .map(|p| p.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map(Path)
            .map_err(|_| ExprError::InvalidPosition(s.to_string()))
    }
}

/// A place a subprogram can be cut out of a program: either a whole node, or
/// a proper subset (two or more operands) of a flattened `+`/`*` chain.
///
/// Printed as the node path, followed by `[i,j,..]` for chain subsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub node: Path,
    pub operands: Option<Vec<usize>>,
}

impl Site {
    pub fn node(path: Path) -> Site {
        Site {
            node: path,
            operands: None,
        }
    }

    pub fn chain_subset(chain: Path, mut operands: Vec<usize>) -> Site {
        operands.sort_unstable();
        Site {
            node: chain,
            operands: Some(operands),
        }
    }

    pub fn is_node(&self) -> bool {
        self.operands.is_none()
    }

    /// Two sites overlap when replacing one would disturb the other.
    pub fn overlaps(&self, other: &Site) -> bool {
        match (&self.operands, &other.operands) {
            (None, None) => self.node.is_prefix_of(&other.node) || other.node.is_prefix_of(&self.node),
            (None, Some(_)) => self.node.is_prefix_of(&other.node) || other.subset_covers(&self.node),
            (Some(_), None) => other.node.is_prefix_of(&self.node) || self.subset_covers(&other.node),
            (Some(x), Some(y)) if self.node == other.node => x.iter().any(|i| y.contains(i)),
            (Some(_), Some(_)) => self.subset_covers(&other.node) || other.subset_covers(&self.node),
        }
    }

    /// Whether a chain-subset site includes the subtree containing `p`.
    fn subset_covers(&self, p: &Path) -> bool {
        match &self.operands {
            None => self.node.is_prefix_of(p),
            Some(ops) => {
                let chain = self.node.indices();
                let q = p.indices();
                q.len() > chain.len() && q[..chain.len()] == *chain && ops.contains(&q[chain.len()])
            }
        }
    }

    /// Site of the node at relative path `rel` inside this site's subprogram.
    ///
    /// For chain subsets the subprogram's operand `k` is the chain's operand
    /// `operands[k]`.
    pub fn descend(&self, rel: &Path) -> Site {
        match &self.operands {
            None => Site::node(self.node.join(rel)),
            Some(ops) => match rel.indices().split_first() {
                None => self.clone(),
                Some((&k, tail)) => {
                    let mut v = self.node.indices().to_vec();
                    v.push(ops[k]);
                    v.extend_from_slice(tail);
                    Site::node(Path::new(v))
                }
            },
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.node)?;
        if let Some(ops) = &self.operands {
            f.write_str("[")?;
            for (i, o) in ops.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{o}")?;
            }
            f.write_str("]")?;
        }
        Ok(())
    }
}

impl FromStr for Site {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExprError::InvalidPosition(s.to_string());
        match s.find('[') {
            None => Ok(Site::node(s.parse()?)),
            Some(open) => {
                let inner = s[open + 1..].strip_suffix(']').ok_or_else(bad)?;
                let ops = inner
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad())?;
                Ok(Site::chain_subset(s[..open].parse()?, ops))
            }
        }
    }
}

impl Serialize for Site {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for Path {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Path {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
