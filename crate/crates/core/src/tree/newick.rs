use super::{Shape, Tree, TreeError};

const TOLERANCE: f64 = 1e-9;

#[derive(Debug)]
struct Parsed {
    children: Vec<Parsed>,
    length: Option<f64>,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error<T>(&self, message: impl Into<String>) -> Result<T, TreeError> {
        Err(TreeError::Syntax {
            position: self.pos,
            message: message.into(),
        })
    }

    fn skip_blank(&mut self) -> Result<(), TreeError> {
        loop {
            match self.text.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => match self.text[self.pos..].iter().position(|&c| c == b']') {
                    Some(end) => self.pos += end + 1,
                    None => return self.error("unterminated comment"),
                },
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>, TreeError> {
        self.skip_blank()?;
        Ok(self.text.get(self.pos).copied())
    }

    fn subtree(&mut self) -> Result<Parsed, TreeError> {
        let mut children = Vec::new();
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.subtree()?);
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.error("expected ',' or ')'"),
                }
            }
        }
        self.label()?;
        let length = if self.peek()? == Some(b':') {
            self.pos += 1;
            Some(self.number()?)
        } else {
            None
        };
        Ok(Parsed { children, length })
    }

    /// Labels are accepted and discarded; tips are renumbered left to right.
    fn label(&mut self) -> Result<(), TreeError> {
        if self.peek()? == Some(b'\'') {
            self.pos += 1;
            loop {
                match self.text.get(self.pos) {
                    Some(b'\'') if self.text.get(self.pos + 1) == Some(&b'\'') => self.pos += 2,
                    Some(b'\'') => {
                        self.pos += 1;
                        return Ok(());
                    }
                    Some(_) => self.pos += 1,
                    None => return self.error("unterminated quoted label"),
                }
            }
        }
        while let Some(&c) = self.text.get(self.pos) {
            if c.is_ascii_whitespace() || b"()[]':;,".contains(&c) {
                break;
            }
            self.pos += 1;
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64, TreeError> {
        self.skip_blank()?;
        let start = self.pos;
        while let Some(&c) = self.text.get(self.pos) {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let token = std::str::from_utf8(&self.text[start..self.pos]).unwrap_or("");
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Ok(_) => {
                self.pos = start;
                self.error("branch length must be finite and nonnegative")
            }
            Err(_) => {
                self.pos = start;
                self.error("expected a branch length")
            }
        }
    }
}

/// Parses one Newick tree with integer-valued, ultrametric branch lengths.
///
/// Node depths are measured from the tips; the root's own branch length (if
/// any) is the stem, so `T` is the root depth plus the stem. Zero-length
/// internal edges and unary nodes are collapsed, turning resolved encodings
/// of simultaneous coalescences into multifurcations.
pub fn parse_newick(text: &str) -> Result<Tree, TreeError> {
    let mut parser = Parser {
        text: text.as_bytes(),
        pos: 0,
    };
    let root = parser.subtree()?;
    if parser.peek()? != Some(b';') {
        return parser.error("expected ';'");
    }
    parser.pos += 1;
    if parser.peek()?.is_some() {
        return parser.error("trailing characters after ';'");
    }

    let mut tip_distances = Vec::new();
    collect_tip_distances(&root, 0.0, true, &mut tip_distances)?;
    let (lo, hi) = tip_distances
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    if hi - lo > TOLERANCE {
        return Err(TreeError::NotUltrametric { spread: hi - lo });
    }
    let total = hi + root.length.unwrap_or(0.0);
    let height = integer(total)?;
    if height == 0 {
        return Err(TreeError::ZeroHeight);
    }
    let shape = build_shape(&root, hi, 0.0)?;
    Tree::from_shape(height, &shape)
}

fn integer(value: f64) -> Result<u64, TreeError> {
    let rounded = value.round();
    if (value - rounded).abs() > TOLERANCE || rounded < 0.0 {
        return Err(TreeError::NonIntegerDepth { value });
    }
    Ok(rounded as u64)
}

fn collect_tip_distances(
    node: &Parsed,
    dist: f64,
    is_root: bool,
    out: &mut Vec<f64>,
) -> Result<(), TreeError> {
    if !is_root && node.length.is_none() {
        return Err(TreeError::InvalidStructure(
            "every non-root branch needs a length".into(),
        ));
    }
    if node.children.is_empty() {
        out.push(dist);
    }
    for c in &node.children {
        collect_tip_distances(c, dist + c.length.unwrap_or(0.0), false, out)?;
    }
    Ok(())
}

fn build_shape(node: &Parsed, tip_dist: f64, dist: f64) -> Result<Shape, TreeError> {
    if node.children.is_empty() {
        return Ok(Shape::Tip);
    }
    let depth = integer(tip_dist - dist)?;
    if depth == 0 {
        return Err(TreeError::InvalidStructure(
            "internal node at depth 0 (zero-length tip branches)".into(),
        ));
    }
    let mut children = Vec::new();
    for c in &node.children {
        let child = build_shape(c, tip_dist, dist + c.length.unwrap_or(0.0))?;
        match child {
            Shape::Internal {
                depth: d,
                children: grand,
            } if d == depth => children.extend(grand),
            other => children.push(other),
        }
    }
    if children.len() == 1 {
        return Ok(children.pop().expect("one child"));
    }
    Ok(Shape::Internal { depth, children })
}

/// Canonical Newick: integer branch lengths, tips labelled by their
/// left-to-right index, root branch equal to the stem.
pub fn write_newick(tree: &Tree) -> String {
    fn write(tree: &Tree, id: usize, parent_depth: u64, out: &mut String) {
        let node = tree.node(id);
        match node.tip_index() {
            Some(label) => out.push_str(&label.to_string()),
            None => {
                out.push('(');
                for (i, &c) in node.children().iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(tree, c, node.depth(), out);
                }
                out.push(')');
            }
        }
        out.push(':');
        out.push_str(&(parent_depth - node.depth()).to_string());
    }
    let mut out = String::new();
    write(tree, tree.root(), tree.height(), &mut out);
    out.push(';');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{depths_to_tree, tree_to_depths, DepthSeq};

    fn depths_of(text: &str) -> DepthSeq {
        tree_to_depths(&parse_newick(text).unwrap()).unwrap()
    }

    #[test]
    fn parses_depths_from_path_lengths() {
        // the (0,1) clade sits 2 below the root, so its MRCA is at depth 1
        // and the root at depth 3
        assert_eq!(
            depths_of("((0:1,1:1):2,2:3):0;"),
            DepthSeq::new(3, vec![1, 3]).unwrap()
        );
        assert_eq!(
            depths_of("((0:1,1:1):1,2:2):1;"),
            DepthSeq::new(3, vec![1, 2]).unwrap()
        );
        assert_eq!(
            depths_of("(0:2,1:2,2:2):1;"),
            DepthSeq::new(3, vec![2, 2]).unwrap()
        );
        assert_eq!(depths_of("0:2;"), DepthSeq::new(2, vec![]).unwrap());
    }

    #[test]
    fn unequal_root_path_rejected() {
        assert!(matches!(
            parse_newick("((0:1,1:1):2,2:3):3;"),
            Ok(_)
        ));
        assert!(matches!(
            parse_newick("((0:1,1:1):1,2:3):3;"),
            Err(TreeError::NotUltrametric { .. })
        ));
    }

    #[test]
    fn fractional_depth_rejected() {
        assert!(matches!(
            parse_newick("(0:1,(1:0.5,2:0.5):0.5):0;"),
            Err(TreeError::NonIntegerDepth { .. })
        ));
    }

    #[test]
    fn tolerates_decimal_noise_labels_and_comments() {
        let text = "[&R] ((A:1.0000000000001,'b c':0.9999999999999)x:1, C:2.0) :1 ;";
        assert_eq!(depths_of(text), DepthSeq::new(3, vec![1, 2]).unwrap());
    }

    #[test]
    fn zero_length_edges_collapse_to_multifurcation() {
        assert_eq!(
            parse_newick("((0:2,1:2):0,2:2):1;").unwrap(),
            depths_to_tree(&DepthSeq::new(3, vec![2, 2]).unwrap())
        );
        assert!(parse_newick("((0:0,1:0):2,2:2):1;").is_err());
    }

    #[test]
    fn syntax_errors_carry_position() {
        assert!(matches!(
            parse_newick("((0:1,1:1):1,2:2):1"),
            Err(TreeError::Syntax { position: 19, .. })
        ));
        assert!(matches!(
            parse_newick("((0:1,1:1:1,2:2):1;"),
            Err(TreeError::Syntax { .. })
        ));
        assert!(matches!(
            parse_newick("(0:1,1:x);"),
            Err(TreeError::Syntax { .. })
        ));
        assert!(matches!(
            parse_newick("(0:1,1);"),
            Err(TreeError::InvalidStructure(_))
        ));
        assert!(matches!(
            parse_newick("(0:1,1:1);x"),
            Err(TreeError::Syntax { .. })
        ));
    }

    #[test]
    fn writes_canonical_text() {
        let write = |t: u64, d: &[u64]| {
            write_newick(&depths_to_tree(&DepthSeq::new(t, d.to_vec()).unwrap()))
        };
        assert_eq!(write(2, &[]), "0:2;");
        assert_eq!(write(3, &[1, 2]), "((0:1,1:1):1,2:2):1;");
        assert_eq!(write(3, &[2, 2]), "(0:2,1:2,2:2):1;");
        assert_eq!(write(3, &[3]), "(0:3,1:3):0;");
    }
}
