//! Syntax trees, their simplification and the node-sequence/relation-graph
//! view consumed by the code encoder.

use super::lexer::{classify_text, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: usize,
    /// Grammar production name, e.g. `BinaryOperation`.
    pub category: String,
    /// Identifier, literal, operator or keyword text carried by the node.
    pub token: Option<String>,
    pub children: Vec<usize>,
}

/// A rooted tree stored as an arena. Node ids are arena indices, the root is
/// id 0 and ids follow preorder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    nodes: Vec<AstNode>,
}

/// Categories that only group or wrap other nodes and carry no meaning of
/// their own once their children are attached to the enclosing node.
pub const WRAPPER_CATEGORIES: &[&str] = &[
    "Arguments",
    "EmptyStatement",
    "Expression",
    "ExpressionStatement",
    "ForInit",
    "ForUpdate",
    "FormalParameters",
    "Modifiers",
    "ParExpression",
    "Statement",
    "StatementExpression",
    "Throws",
    "VariableDeclarators",
];

pub fn is_wrapper(category: &str) -> bool {
    WRAPPER_CATEGORIES.contains(&category)
}

/// Owned subtree used while building or rewriting trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub category: String,
    pub token: Option<String>,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn new(category: &str, token: Option<String>, children: Vec<TreeNode>) -> Self {
        Self {
            category: category.to_string(),
            token,
            children,
        }
    }

    pub fn leaf(category: &str, token: &str) -> Self {
        Self::new(category, Some(token.to_string()), Vec::new())
    }

    pub fn branch(category: &str, children: Vec<TreeNode>) -> Self {
        Self::new(category, None, children)
    }
}

impl Ast {
    /// Flattens an owned tree into preorder-numbered arena form.
    pub fn from_tree(root: TreeNode) -> Self {
        let mut nodes = Vec::new();
        fn walk(t: TreeNode, nodes: &mut Vec<AstNode>) -> usize {
            let id = nodes.len();
            nodes.push(AstNode {
                id,
                category: t.category,
                token: t.token,
                children: Vec::new(),
            });
            let kids: Vec<usize> = t.children.into_iter().map(|c| walk(c, nodes)).collect();
            nodes[id].children = kids;
            id
        }
        walk(root, &mut nodes);
        Self { nodes }
    }

    /// Builds from arbitrary ids; validates the tree shape and renumbers in
    /// preorder from the root.
    pub(crate) fn from_unordered(raw: Vec<AstNode>, root: usize) -> Result<Self, String> {
        use std::collections::HashMap;
        let mut by_id: HashMap<usize, &AstNode> = HashMap::new();
        for n in &raw {
            if by_id.insert(n.id, n).is_some() {
                return Err(format!("duplicate node id {}", n.id));
            }
        }
        if !by_id.contains_key(&root) {
            return Err(format!("root id {root} not present"));
        }
        let mut parent: HashMap<usize, usize> = HashMap::new();
        for n in &raw {
            for &c in &n.children {
                if !by_id.contains_key(&c) {
                    return Err(format!("node {} references missing child {c}", n.id));
                }
                if c == root {
                    return Err(format!("root {root} appears as a child of {}", n.id));
                }
                if let Some(p) = parent.insert(c, n.id) {
                    return Err(format!("node {c} has two parents ({p} and {})", n.id));
                }
            }
        }
        // Every non-root node has exactly one parent; reachability from the
        // root then rules out cycles.
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                return Err(format!("cycle through node {id}"));
            }
            stack.extend(by_id[&id].children.iter().copied());
        }
        if seen.len() != raw.len() {
            return Err("node set contains a cycle or nodes unreachable from the root".into());
        }
        fn build(id: usize, by_id: &HashMap<usize, &AstNode>) -> TreeNode {
            let n = by_id[&id];
            TreeNode {
                category: n.category.clone(),
                token: n.token.clone(),
                children: n.children.iter().map(|&c| build(c, by_id)).collect(),
            }
        }
        Ok(Self::from_tree(build(root, &by_id)))
    }

    pub fn to_tree(&self) -> TreeNode {
        fn build(ast: &Ast, id: usize) -> TreeNode {
            let n = &ast.nodes[id];
            TreeNode {
                category: n.category.clone(),
                token: n.token.clone(),
                children: n.children.iter().map(|&c| build(ast, c)).collect(),
            }
        }
        build(self, 0)
    }

    pub fn root(&self) -> &AstNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &AstNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parent of each node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.nodes.len()];
        for n in &self.nodes {
            for &c in &n.children {
                out[c] = Some(n.id);
            }
        }
        out
    }

    /// Node ids in preorder (equal to `0..len` for trees built here).
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    /// Sorted token texts of nodes whose token is an identifier, literal or
    /// operator (keyword-bearing nodes excluded).
    pub fn symbol_tokens(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| n.token.as_ref())
            .filter(|t| classify_text(t) != TokenKind::Keyword)
            .cloned()
            .collect();
        v.sort();
        v
    }

    /// Removes wrapper nodes and collapses token-less single-child chains.
    ///
    /// Applied bottom-up: (a) a token-less node whose category is a wrapper is
    /// replaced by its (already simplified) children, in order; (b) a
    /// token-less node left with exactly one child is replaced by that child.
    /// The root is never removed. One pass reaches the fixpoint.
    pub fn simplify(&self) -> Ast {
        fn go(ast: &Ast, id: usize, is_root: bool) -> Vec<TreeNode> {
            let n = &ast.nodes[id];
            let children: Vec<TreeNode> =
                n.children.iter().flat_map(|&c| go(ast, c, false)).collect();
            if !is_root && n.token.is_none() && (is_wrapper(&n.category) || children.len() == 1) {
                return children;
            }
            vec![TreeNode {
                category: n.category.clone(),
                token: n.token.clone(),
                children,
            }]
        }
        let mut top = go(self, 0, true);
        Ast::from_tree(top.remove(0))
    }

    pub fn to_code_graph(&self) -> CodeGraph {
        let order = self.preorder();
        let mut position = vec![0; self.nodes.len()];
        for (i, &id) in order.iter().enumerate() {
            position[id] = i;
        }
        let n = order.len();
        let labels = order
            .iter()
            .map(|&id| node_label(&self.nodes[id]))
            .collect();
        let mut adjacency = vec![0u8; n * n];
        for i in 0..n {
            adjacency[i * n + i] = 1;
        }
        for node in &self.nodes {
            let p = position[node.id];
            for &c in &node.children {
                let q = position[c];
                adjacency[p * n + q] = 1;
                adjacency[q * n + p] = 1;
            }
        }
        CodeGraph {
            nodes: labels,
            adjacency,
        }
    }
}

/// Graph-node label: bucketed literal, token text, or category name.
pub fn node_label(node: &AstNode) -> String {
    match &node.token {
        Some(tok) => bucket_literal(tok),
        None => node.category.clone(),
    }
}

pub fn bucket_literal(token: &str) -> String {
    if classify_text(token) == TokenKind::Literal {
        if token.starts_with('"') || token.starts_with('\'') {
            return "<str>".into();
        }
        if token.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            return "<num>".into();
        }
    }
    token.to_string()
}

/// Node sequence (preorder of the simplified tree) plus the symmetric
/// relation matrix with self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGraph {
    nodes: Vec<String>,
    adjacency: Vec<u8>,
}

impl CodeGraph {
    pub fn new(nodes: Vec<String>, adjacency: Vec<u8>) -> Result<Self, String> {
        let n = nodes.len();
        if n == 0 {
            return Err("code graph needs at least one node".into());
        }
        if adjacency.len() != n * n {
            return Err(format!(
                "adjacency has {} entries for {n} nodes",
                adjacency.len()
            ));
        }
        Ok(Self { nodes, adjacency })
    }

    /// Single-node graph, used for degenerate inputs.
    pub fn singleton(label: &str) -> Self {
        Self {
            nodes: vec![label.to_string()],
            adjacency: vec![1],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.nodes.len() + j] != 0
    }

    pub fn adjacency(&self) -> &[u8] {
        &self.adjacency
    }

    pub fn degree_with_self(&self, i: usize) -> usize {
        let n = self.nodes.len();
        self.adjacency[i * n..(i + 1) * n]
            .iter()
            .filter(|&&a| a != 0)
            .count()
    }

    /// `D̃⁻¹ Ã` as a dense row-major matrix.
    pub fn row_normalized(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let d = self.degree_with_self(i).max(1) as f64;
            for j in 0..n {
                if self.edge(i, j) {
                    out[i * n + j] = 1.0 / d;
                }
            }
        }
        out
    }
}
