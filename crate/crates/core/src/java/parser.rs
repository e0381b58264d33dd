//! Recursive-descent parser for method declarations in a Java subset.
//!
//! Supported: modifiers and argument-less annotations, primitive/qualified/
//! array types, parameters, `throws`, blocks, local variables, expression
//! statements, `if`/`else`, `for` (classic and enhanced), `while`, `do`,
//! `return`, `break`, `continue`, `throw`; expressions with the usual
//! precedence, assignment, ternary, casts, `instanceof`, calls, field access,
//! array indexing and `new`. Generics, lambdas, method references, anonymous
//! classes, annotations with arguments, `try`, `switch` and nested types are
//! rejected with [`JavaError::Unsupported`].

use super::ast::{Ast, TreeNode};
use super::lexer::{Token, TokenKind};
use super::JavaError;

use TokenKind::{Identifier, Keyword, Literal, Operator, Separator};

const PRIMITIVES: &[&str] = &[
    "boolean", "byte", "char", "short", "int", "long", "float", "double",
];

const MODIFIERS: &[&str] = &[
    "public",
    "protected",
    "private",
    "static",
    "final",
    "abstract",
    "synchronized",
    "native",
    "strictfp",
    "transient",
    "volatile",
    "default",
];

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
];

// Binary precedence levels, loosest first.
const BINARY_LEVELS: &[&[&str]] = &[
    &["||"],
    &["&&"],
    &["|"],
    &["^"],
    &["&"],
    &["==", "!="],
    &["<", ">", "<=", ">="],
    &["<<", ">>", ">>>"],
    &["+", "-"],
    &["*", "/", "%"],
];

/// Summary of one method found in a compilation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodInfo {
    pub name: String,
    /// Parameter type names as written, e.g. `["int", "String[]"]`.
    pub param_types: Vec<String>,
    /// Exact source text of the declaration.
    pub source: String,
    /// Token texts of the declaration, for whitespace-insensitive comparison.
    pub token_texts: Vec<String>,
    pub has_body: bool,
}

pub struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

type PResult<T> = Result<T, JavaError>;

impl<'a> Parser<'a> {
    pub fn new(tokens: &'a [Token]) -> Self {
        Self { tokens, pos: 0 }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + n)
    }

    fn at(&self, kind: TokenKind, text: &str) -> bool {
        self.peek().is_some_and(|t| t.is(kind, text))
    }

    fn at_n(&self, n: usize, kind: TokenKind, text: &str) -> bool {
        self.peek_at(n).is_some_and(|t| t.is(kind, text))
    }

    fn at_sep(&self, text: &str) -> bool {
        self.at(Separator, text)
    }

    fn at_op(&self, text: &str) -> bool {
        self.at(Operator, text)
    }

    fn at_kw(&self, text: &str) -> bool {
        self.at(Keyword, text)
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek().is_some_and(|t| t.kind == kind)
    }

    fn position(&self) -> (usize, usize) {
        match self.peek().or_else(|| self.tokens.last()) {
            Some(t) => (t.line, t.column),
            None => (1, 1),
        }
    }

    fn error(&self, message: impl Into<String>) -> JavaError {
        let (line, column) = self.position();
        JavaError::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    fn unsupported(&self, construct: &str) -> JavaError {
        let (line, column) = self.position();
        JavaError::Unsupported {
            construct: construct.to_string(),
            line,
            column,
        }
    }

    fn describe_next(&self) -> String {
        match self.peek() {
            Some(t) => format!("`{}`", t.text),
            None => "end of input".into(),
        }
    }

    fn bump(&mut self) -> PResult<&'a Token> {
        let t = self
            .peek()
            .ok_or_else(|| self.error("unexpected end of input"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, kind: TokenKind, text: &str) -> PResult<&'a Token> {
        if self.at(kind, text) {
            self.bump()
        } else {
            Err(self.error(format!("expected `{text}`, found {}", self.describe_next())))
        }
    }

    fn expect_ident(&mut self) -> PResult<&'a Token> {
        if self.at_kind(Identifier) {
            self.bump()
        } else {
            Err(self.error(format!(
                "expected identifier, found {}",
                self.describe_next()
            )))
        }
    }

    fn check_lambda_arrow(&self) -> PResult<()> {
        if self.at_op("->") {
            return Err(self.unsupported("lambda expression"));
        }
        if self.at_sep("::") {
            return Err(self.unsupported("method reference"));
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    // ---- declarations ---------------------------------------------------

    fn annotations_and_modifiers(&mut self) -> PResult<Vec<TreeNode>> {
        let mut out = Vec::new();
        loop {
            if self.at_sep("@") {
                if self.at_n(1, Keyword, "interface") {
                    return Err(self.unsupported("annotation type declaration"));
                }
                self.bump()?;
                let mut name = TreeNode::leaf("Annotation", &self.expect_ident()?.text);
                let mut tail = &mut name;
                while self.at_sep(".") {
                    self.bump()?;
                    let seg = TreeNode::leaf("Annotation", &self.expect_ident()?.text);
                    tail.children.push(seg);
                    tail = tail.children.last_mut().unwrap();
                }
                if self.at_sep("(") {
                    return Err(self.unsupported("annotation with arguments"));
                }
                out.push(name);
            } else if self
                .peek()
                .is_some_and(|t| t.kind == Keyword && MODIFIERS.contains(&t.text.as_str()))
            {
                let t = self.bump()?;
                out.push(TreeNode::leaf("Modifier", &t.text));
            } else {
                return Ok(out);
            }
        }
    }

    fn check_no_generics(&self) -> PResult<()> {
        if self.at_op("<") {
            return Err(self.unsupported("generics"));
        }
        Ok(())
    }

    /// `primitive | Ident(.Ident)*` followed by `[]`*.
    fn parse_type(&mut self) -> PResult<TreeNode> {
        let base = if self
            .peek()
            .is_some_and(|t| t.kind == Keyword && PRIMITIVES.contains(&t.text.as_str()))
        {
            TreeNode::leaf("BasicType", &self.bump()?.text)
        } else if self.at_kind(Identifier) {
            self.parse_reference_type()?
        } else {
            return Err(self.error(format!("expected a type, found {}", self.describe_next())));
        };
        let mut dims = 0;
        while self.at_sep("[") && self.at_n(1, Separator, "]") {
            self.bump()?;
            self.bump()?;
            dims += 1;
        }
        Ok(wrap_array(base, dims))
    }

    fn parse_reference_type(&mut self) -> PResult<TreeNode> {
        let mut segments = vec![self.expect_ident()?.text.clone()];
        self.check_no_generics()?;
        while self.at_sep(".") && self.peek_at(1).is_some_and(|t| t.kind == Identifier) {
            self.bump()?;
            segments.push(self.bump()?.text.clone());
            self.check_no_generics()?;
        }
        Ok(qualified("ReferenceType", &segments))
    }

    fn type_text(tokens: &[Token]) -> String {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Parses one method or constructor declaration starting at the current
    /// token (annotations and modifiers included).
    pub fn parse_method(&mut self) -> PResult<(TreeNode, MethodInfo)> {
        let start = self.pos;
        let mut children = Vec::new();
        let mods = self.annotations_and_modifiers()?;
        if !mods.is_empty() {
            children.push(TreeNode::branch("Modifiers", mods));
        }
        if self.at_op("<") {
            return Err(self.unsupported("generic method"));
        }
        if self.at_kw("class") || self.at_kw("interface") || self.at_kw("enum") {
            return Err(self.unsupported("nested type declaration"));
        }
        let is_constructor = self.at_kind(Identifier) && self.at_n(1, Separator, "(");
        if !is_constructor {
            if self.at_kw("void") {
                children.push(TreeNode::leaf("BasicType", &self.bump()?.text));
            } else {
                children.push(self.parse_type()?);
            }
        }
        let name = self.expect_ident()?.text.clone();
        let category = if is_constructor {
            "ConstructorDeclaration"
        } else {
            "MethodDeclaration"
        };
        self.expect(Separator, "(")?;
        let mut params = Vec::new();
        let mut param_types = Vec::new();
        if !self.at_sep(")") {
            loop {
                let (p, ty) = self.parse_formal_parameter()?;
                params.push(p);
                param_types.push(ty);
                if self.at_sep(",") {
                    self.bump()?;
                } else {
                    break;
                }
            }
        }
        self.expect(Separator, ")")?;
        children.push(TreeNode::branch("FormalParameters", params));
        if self.at_kw("throws") {
            self.bump()?;
            let mut thrown = vec![self.parse_reference_type()?];
            while self.at_sep(",") {
                self.bump()?;
                thrown.push(self.parse_reference_type()?);
            }
            children.push(TreeNode::branch("Throws", thrown));
        }
        let has_body = if self.at_sep(";") {
            self.bump()?;
            false
        } else if self.at_sep("{") {
            children.push(self.parse_block()?);
            true
        } else {
            return Err(self.error(format!(
                "expected method body, found {}",
                self.describe_next()
            )));
        };
        let node = TreeNode::new(category, Some(name.clone()), children);
        let toks = &self.tokens[start..self.pos];
        let info = MethodInfo {
            name,
            param_types,
            source: String::new(),
            token_texts: toks.iter().map(|t| t.text.clone()).collect(),
            has_body,
        };
        Ok((node, info))
    }

    fn parse_formal_parameter(&mut self) -> PResult<(TreeNode, String)> {
        let mut children = self.annotations_and_modifiers()?;
        let ty_start = self.pos;
        let ty = self.parse_type()?;
        let mut ty_text = Self::type_text(&self.tokens[ty_start..self.pos]);
        if self.at_sep("...") {
            self.bump()?;
            ty_text.push_str("...");
        }
        children.push(ty);
        let name = self.expect_ident()?.text.clone();
        while self.at_sep("[") && self.at_n(1, Separator, "]") {
            self.bump()?;
            self.bump()?;
            ty_text.push_str("[]");
        }
        Ok((
            TreeNode::new("FormalParameter", Some(name), children),
            ty_text,
        ))
    }

    // ---- statements -----------------------------------------------------

    fn parse_block(&mut self) -> PResult<TreeNode> {
        self.expect(Separator, "{")?;
        let mut stmts = Vec::new();
        while !self.at_sep("}") {
            if self.is_done() {
                return Err(self.error("unterminated block"));
            }
            stmts.push(self.parse_statement()?);
        }
        self.bump()?;
        Ok(TreeNode::branch("Block", stmts))
    }

    fn parse_statement(&mut self) -> PResult<TreeNode> {
        let Some(tok) = self.peek() else {
            return Err(self.error("expected statement, found end of input"));
        };
        if tok.is(Separator, "{") {
            return self.parse_block();
        }
        if tok.is(Separator, ";") {
            self.bump()?;
            return Ok(TreeNode::branch("EmptyStatement", Vec::new()));
        }
        if tok.kind == Keyword {
            match tok.text.as_str() {
                "if" => {
                    self.bump()?;
                    let cond = self.parse_par_expression()?;
                    let then = self.parse_statement()?;
                    let mut kids = vec![cond, then];
                    if self.at_kw("else") {
                        self.bump()?;
                        kids.push(self.parse_statement()?);
                    }
                    return Ok(TreeNode::branch("IfStatement", kids));
                }
                "while" => {
                    self.bump()?;
                    let cond = self.parse_par_expression()?;
                    let body = self.parse_statement()?;
                    return Ok(TreeNode::branch("WhileStatement", vec![cond, body]));
                }
                "do" => {
                    self.bump()?;
                    let body = self.parse_statement()?;
                    self.expect(Keyword, "while")?;
                    let cond = self.parse_par_expression()?;
                    self.expect(Separator, ";")?;
                    return Ok(TreeNode::branch("DoStatement", vec![body, cond]));
                }
                "for" => return self.parse_for(),
                "return" => {
                    self.bump()?;
                    let mut kids = Vec::new();
                    if !self.at_sep(";") {
                        kids.push(self.parse_expression_wrapped()?);
                    }
                    self.expect(Separator, ";")?;
                    return Ok(TreeNode::branch("ReturnStatement", kids));
                }
                "break" | "continue" => {
                    let category = if tok.text == "break" {
                        "BreakStatement"
                    } else {
                        "ContinueStatement"
                    };
                    self.bump()?;
                    let label = if self.at_kind(Identifier) {
                        Some(self.bump()?.text.clone())
                    } else {
                        None
                    };
                    self.expect(Separator, ";")?;
                    return Ok(TreeNode::new(category, label, Vec::new()));
                }
                "throw" => {
                    self.bump()?;
                    let e = self.parse_expression_wrapped()?;
                    self.expect(Separator, ";")?;
                    return Ok(TreeNode::branch("ThrowStatement", vec![e]));
                }
                "try" | "catch" | "finally" => return Err(self.unsupported("try/catch")),
                "switch" | "case" => return Err(self.unsupported("switch")),
                "synchronized" => return Err(self.unsupported("synchronized block")),
                "assert" => return Err(self.unsupported("assert")),
                "class" | "interface" | "enum" => {
                    return Err(self.unsupported("local type declaration"))
                }
                _ => {}
            }
        }
        if tok.kind == Identifier && self.at_n(1, Operator, ":") {
            return Err(self.unsupported("labeled statement"));
        }
        if self.looks_like_local_var()? {
            let decl = self.parse_local_var()?;
            self.expect(Separator, ";")?;
            return Ok(decl);
        }
        let e = self.parse_expression_wrapped()?;
        self.expect(Separator, ";")?;
        Ok(TreeNode::branch("ExpressionStatement", vec![e]))
    }

    /// Decides whether the statement at the cursor declares local variables.
    fn looks_like_local_var(&self) -> PResult<bool> {
        let mut i = self.pos;
        let toks = self.tokens;
        while i < toks.len() && (toks[i].is(Keyword, "final") || toks[i].is(Separator, "@")) {
            i += if toks[i].is(Separator, "@") { 2 } else { 1 };
        }
        if i >= toks.len() {
            return Ok(false);
        }
        if toks[i].kind == Keyword && PRIMITIVES.contains(&toks[i].text.as_str()) {
            return Ok(!toks.get(i + 1).is_some_and(|t| t.is(Separator, ".")));
        }
        if toks[i].kind != Identifier {
            return Ok(false);
        }
        i += 1;
        while i + 1 < toks.len() && toks[i].is(Separator, ".") && toks[i + 1].kind == Identifier {
            i += 2;
        }
        if i < toks.len() && toks[i].is(Operator, "<") && self.generic_type_follows(i) {
            return Err(JavaError::Unsupported {
                construct: "generics".into(),
                line: toks[i].line,
                column: toks[i].column,
            });
        }
        while i + 1 < toks.len() && toks[i].is(Separator, "[") && toks[i + 1].is(Separator, "]") {
            i += 2;
        }
        Ok(i < toks.len() && toks[i].kind == Identifier)
    }

    /// `<` at `i` opens a type argument list closed by `>` and followed by a name.
    fn generic_type_follows(&self, mut i: usize) -> bool {
        let toks = self.tokens;
        let mut depth = 0i32;
        while i < toks.len() {
            let t = &toks[i];
            match (t.kind, t.text.as_str()) {
                (Operator, "<") => depth += 1,
                (Operator, ">") => depth -= 1,
                (Operator, ">>") => depth -= 2,
                (Operator, ">>>") => depth -= 3,
                (Operator, "?")
                | (Separator, ",")
                | (Separator, ".")
                | (Separator, "[")
                | (Separator, "]")
                | (Identifier, _) => {}
                (Keyword, "extends") | (Keyword, "super") => {}
                (Keyword, k) if PRIMITIVES.contains(&k) => {}
                _ => return false,
            }
            i += 1;
            if depth <= 0 {
                return depth == 0 && toks.get(i).is_some_and(|t| t.kind == Identifier);
            }
        }
        false
    }

    fn parse_local_var(&mut self) -> PResult<TreeNode> {
        let mut children = self.annotations_and_modifiers()?;
        children.push(self.parse_type()?);
        let mut decls = vec![self.parse_declarator()?];
        while self.at_sep(",") {
            self.bump()?;
            decls.push(self.parse_declarator()?);
        }
        children.push(TreeNode::branch("VariableDeclarators", decls));
        Ok(TreeNode::branch("LocalVariableDeclaration", children))
    }

    fn parse_declarator(&mut self) -> PResult<TreeNode> {
        let name = self.expect_ident()?.text.clone();
        let mut dims = 0;
        while self.at_sep("[") && self.at_n(1, Separator, "]") {
            self.bump()?;
            self.bump()?;
            dims += 1;
        }
        let mut kids = Vec::new();
        if dims > 0 {
            kids.push(TreeNode::branch("ArrayDimensions", Vec::new()));
        }
        if self.at_op("=") {
            let op = self.bump()?.text.clone();
            let init = if self.at_sep("{") {
                self.parse_array_initializer()?
            } else {
                self.parse_expression_wrapped()?
            };
            kids.push(TreeNode::new("VariableInitializer", Some(op), vec![init]));
        }
        Ok(TreeNode::new("VariableDeclarator", Some(name), kids))
    }

    fn parse_array_initializer(&mut self) -> PResult<TreeNode> {
        self.expect(Separator, "{")?;
        let mut items = Vec::new();
        while !self.at_sep("}") {
            items.push(if self.at_sep("{") {
                self.parse_array_initializer()?
            } else {
                self.parse_expression()?
            });
            if self.at_sep(",") {
                self.bump()?;
            } else {
                break;
            }
        }
        self.expect(Separator, "}")?;
        Ok(TreeNode::branch("ArrayInitializer", items))
    }

    fn parse_for(&mut self) -> PResult<TreeNode> {
        self.expect(Keyword, "for")?;
        self.expect(Separator, "(")?;
        if self.looks_like_local_var()? && self.is_enhanced_for() {
            let mut var = self.annotations_and_modifiers()?;
            var.push(self.parse_type()?);
            let name = self.expect_ident()?.text.clone();
            var.push(TreeNode::new("VariableDeclarator", Some(name), Vec::new()));
            let colon = self.expect(Operator, ":")?.text.clone();
            let iterable = self.parse_expression_wrapped()?;
            self.expect(Separator, ")")?;
            let body = self.parse_statement()?;
            let control = TreeNode::new(
                "EnhancedForControl",
                Some(colon),
                vec![TreeNode::branch("LocalVariableDeclaration", var), iterable],
            );
            return Ok(TreeNode::branch("ForStatement", vec![control, body]));
        }
        let mut kids = Vec::new();
        let mut init = Vec::new();
        if !self.at_sep(";") {
            if self.looks_like_local_var()? {
                init.push(self.parse_local_var()?);
            } else {
                init.push(self.parse_expression_wrapped()?);
                while self.at_sep(",") {
                    self.bump()?;
                    init.push(self.parse_expression_wrapped()?);
                }
            }
        }
        kids.push(TreeNode::branch("ForInit", init));
        self.expect(Separator, ";")?;
        if !self.at_sep(";") {
            kids.push(TreeNode::branch(
                "ForCondition",
                vec![self.parse_expression_wrapped()?],
            ));
        }
        self.expect(Separator, ";")?;
        let mut update = Vec::new();
        if !self.at_sep(")") {
            update.push(self.parse_expression_wrapped()?);
            while self.at_sep(",") {
                self.bump()?;
                update.push(self.parse_expression_wrapped()?);
            }
        }
        kids.push(TreeNode::branch("ForUpdate", update));
        self.expect(Separator, ")")?;
        kids.push(self.parse_statement()?);
        Ok(TreeNode::branch("ForStatement", kids))
    }

    /// After `for (`: is this `Type name :`?
    fn is_enhanced_for(&self) -> bool {
        let mut depth = 0;
        for t in &self.tokens[self.pos..] {
            match (t.kind, t.text.as_str()) {
                (Separator, "(") | (Separator, "[") => depth += 1,
                (Separator, ")") | (Separator, "]") if depth > 0 => depth -= 1,
                (Separator, ")") | (Separator, ";") | (Operator, "=") => return false,
                (Operator, ":") if depth == 0 => return true,
                _ => {}
            }
        }
        false
    }

    // ---- expressions ----------------------------------------------------

    fn parse_par_expression(&mut self) -> PResult<TreeNode> {
        self.expect(Separator, "(")?;
        let e = self.parse_expression()?;
        self.expect(Separator, ")")?;
        Ok(TreeNode::branch("ParExpression", vec![e]))
    }

    fn parse_expression_wrapped(&mut self) -> PResult<TreeNode> {
        Ok(TreeNode::branch(
            "Expression",
            vec![self.parse_expression()?],
        ))
    }

    pub fn parse_expression(&mut self) -> PResult<TreeNode> {
        let lhs = self.parse_ternary()?;
        if let Some(t) = self.peek() {
            if t.kind == Operator && ASSIGN_OPS.contains(&t.text.as_str()) {
                let op = self.bump()?.text.clone();
                let rhs = self.parse_expression()?;
                return Ok(TreeNode::new("Assignment", Some(op), vec![lhs, rhs]));
            }
        }
        Ok(lhs)
    }

    fn parse_ternary(&mut self) -> PResult<TreeNode> {
        let cond = self.parse_binary(0)?;
        if self.at_op("?") {
            let q = self.bump()?.text.clone();
            let then = self.parse_expression()?;
            let colon = self.expect(Operator, ":")?.text.clone();
            let otherwise = self.parse_ternary()?;
            return Ok(TreeNode::new(
                "TernaryExpression",
                Some(q),
                vec![
                    cond,
                    then,
                    TreeNode::new("TernaryElse", Some(colon), vec![otherwise]),
                ],
            ));
        }
        Ok(cond)
    }

    fn parse_binary(&mut self, level: usize) -> PResult<TreeNode> {
        if level == BINARY_LEVELS.len() {
            return self.parse_unary();
        }
        let mut lhs = self.parse_binary(level + 1)?;
        loop {
            if level == 6 && self.at_kw("instanceof") {
                self.bump()?;
                let ty = self.parse_type()?;
                lhs = TreeNode::branch("InstanceOf", vec![lhs, ty]);
                continue;
            }
            let Some(t) = self.peek() else { break };
            if t.kind == Operator && BINARY_LEVELS[level].contains(&t.text.as_str()) {
                let op = self.bump()?.text.clone();
                let rhs = self.parse_binary(level + 1)?;
                lhs = TreeNode::new("BinaryOperation", Some(op), vec![lhs, rhs]);
            } else {
                break;
            }
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> PResult<TreeNode> {
        if let Some(t) = self.peek() {
            if t.kind == Operator && matches!(t.text.as_str(), "+" | "-" | "!" | "~" | "++" | "--")
            {
                let op = self.bump()?.text.clone();
                let operand = self.parse_unary()?;
                return Ok(TreeNode::new("PrefixOperation", Some(op), vec![operand]));
            }
            if t.is(Separator, "(") {
                if let Some(cast) = self.try_cast()? {
                    return Ok(cast);
                }
            }
        }
        let mut e = self.parse_primary()?;
        e = self.parse_selectors(e)?;
        while let Some(t) = self.peek() {
            if t.kind == Operator && (t.text == "++" || t.text == "--") {
                let op = self.bump()?.text.clone();
                e = TreeNode::new("PostfixOperation", Some(op), vec![e]);
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn try_cast(&mut self) -> PResult<Option<TreeNode>> {
        let toks = self.tokens;
        let mut i = self.pos + 1;
        let primitive = toks
            .get(i)
            .is_some_and(|t| t.kind == Keyword && PRIMITIVES.contains(&t.text.as_str()));
        if primitive {
            i += 1;
        } else if toks.get(i).is_some_and(|t| t.kind == Identifier) {
            i += 1;
            while toks.get(i).is_some_and(|t| t.is(Separator, "."))
                && toks.get(i + 1).is_some_and(|t| t.kind == Identifier)
            {
                i += 2;
            }
        } else {
            return Ok(None);
        }
        while toks.get(i).is_some_and(|t| t.is(Separator, "["))
            && toks.get(i + 1).is_some_and(|t| t.is(Separator, "]"))
        {
            i += 2;
        }
        if !toks.get(i).is_some_and(|t| t.is(Separator, ")")) {
            return Ok(None);
        }
        let next = toks.get(i + 1);
        let operand_follows = next.is_some_and(|t| match t.kind {
            Identifier | Literal => true,
            Separator => t.text == "(",
            Operator => {
                primitive && matches!(t.text.as_str(), "+" | "-")
                    || matches!(t.text.as_str(), "!" | "~")
            }
            Keyword => matches!(t.text.as_str(), "this" | "new" | "super"),
        });
        if !operand_follows {
            return Ok(None);
        }
        self.bump()?;
        let ty = self.parse_type()?;
        self.expect(Separator, ")")?;
        let operand = self.parse_unary()?;
        Ok(Some(TreeNode::branch("Cast", vec![ty, operand])))
    }

    fn parse_arguments(&mut self) -> PResult<TreeNode> {
        self.expect(Separator, "(")?;
        let mut args = Vec::new();
        if !self.at_sep(")") {
            loop {
                args.push(self.parse_expression()?);
                if self.at_sep(",") {
                    self.bump()?;
                } else {
                    break;
                }
            }
        }
        self.expect(Separator, ")")?;
        Ok(TreeNode::branch("Arguments", args))
    }

    fn parse_primary(&mut self) -> PResult<TreeNode> {
        let t = self
            .peek()
            .ok_or_else(|| self.error("expected expression, found end of input"))?;
        match t.kind {
            Literal => {
                self.bump()?;
                Ok(TreeNode::leaf("Literal", &t.text))
            }
            Identifier => {
                self.bump()?;
                self.check_lambda_arrow()?;
                if self.at_sep("(") {
                    let args = self.parse_arguments()?;
                    Ok(TreeNode::new(
                        "MethodInvocation",
                        Some(t.text.clone()),
                        vec![args],
                    ))
                } else {
                    Ok(TreeNode::leaf("Name", &t.text))
                }
            }
            Separator if t.text == "(" => {
                if self.lambda_params_ahead() {
                    return Err(self.unsupported("lambda expression"));
                }
                let e = self.parse_par_expression()?;
                self.check_lambda_arrow()?;
                Ok(e)
            }
            Keyword => match t.text.as_str() {
                "this" => {
                    self.bump()?;
                    if self.at_sep("(") {
                        let args = self.parse_arguments()?;
                        return Ok(TreeNode::new(
                            "ExplicitConstructorInvocation",
                            Some(t.text.clone()),
                            vec![args],
                        ));
                    }
                    Ok(TreeNode::leaf("This", &t.text))
                }
                "super" => {
                    self.bump()?;
                    if self.at_sep("(") {
                        let args = self.parse_arguments()?;
                        return Ok(TreeNode::new(
                            "ExplicitConstructorInvocation",
                            Some(t.text.clone()),
                            vec![args],
                        ));
                    }
                    if !self.at_sep(".") {
                        return Err(self.error("expected `.` after `super`"));
                    }
                    Ok(TreeNode::leaf("Super", &t.text))
                }
                "new" => self.parse_creator(),
                "switch" => Err(self.unsupported("switch")),
                k if PRIMITIVES.contains(&k) || k == "void" => {
                    if self.at_n(1, Separator, ".")
                        && self.peek_at(2).is_some_and(|t| t.is(Keyword, "class"))
                    {
                        Err(self.unsupported("class literal"))
                    } else {
                        Err(self.error(format!("unexpected type keyword `{k}` in expression")))
                    }
                }
                k => Err(self.error(format!("unexpected keyword `{k}` in expression"))),
            },
            _ => {
                if t.is(Separator, "@") {
                    return Err(self.unsupported("annotation in expression"));
                }
                Err(self.error(format!("expected expression, found `{}`", t.text)))
            }
        }
    }

    /// `(a, b) ->` or `() ->` or `(Type a) ->` at the cursor.
    fn lambda_params_ahead(&self) -> bool {
        let mut depth = 0;
        for (k, t) in self.tokens[self.pos..].iter().enumerate() {
            if t.is(Separator, "(") {
                depth += 1;
            } else if t.is(Separator, ")") {
                depth -= 1;
                if depth == 0 {
                    return self
                        .tokens
                        .get(self.pos + k + 1)
                        .is_some_and(|n| n.is(Operator, "->"));
                }
            }
        }
        false
    }

    fn parse_creator(&mut self) -> PResult<TreeNode> {
        self.expect(Keyword, "new")?;
        let base = if self
            .peek()
            .is_some_and(|t| t.kind == Keyword && PRIMITIVES.contains(&t.text.as_str()))
        {
            TreeNode::leaf("BasicType", &self.bump()?.text)
        } else {
            self.parse_reference_type()?
        };
        if self.at_sep("[") {
            let mut kids = vec![base];
            let mut dims = Vec::new();
            while self.at_sep("[") {
                self.bump()?;
                if self.at_sep("]") {
                    self.bump()?;
                    dims.push(TreeNode::branch("ArrayDimensions", Vec::new()));
                } else {
                    dims.push(self.parse_expression()?);
                    self.expect(Separator, "]")?;
                }
            }
            kids.extend(dims);
            if self.at_sep("{") {
                kids.push(self.parse_array_initializer()?);
            }
            return Ok(TreeNode::branch("ArrayCreator", kids));
        }
        let args = self.parse_arguments()?;
        if self.at_sep("{") {
            return Err(self.unsupported("anonymous class"));
        }
        Ok(TreeNode::branch("ClassCreator", vec![base, args]))
    }

    fn parse_selectors(&mut self, mut e: TreeNode) -> PResult<TreeNode> {
        loop {
            if self.at_sep(".") {
                self.bump()?;
                if self.at_op("<") {
                    return Err(self.unsupported("generics"));
                }
                if self.at_kw("class") {
                    return Err(self.unsupported("class literal"));
                }
                if self.at_kw("new") {
                    return Err(self.unsupported("qualified instance creation"));
                }
                let name = self.expect_ident()?.text.clone();
                if self.at_sep("(") {
                    let args = self.parse_arguments()?;
                    e = TreeNode::new("MethodInvocation", Some(name), vec![e, args]);
                } else {
                    e = TreeNode::new("FieldAccess", Some(name), vec![e]);
                }
            } else if self.at_sep("[") {
                self.bump()?;
                let idx = self.parse_expression()?;
                self.expect(Separator, "]")?;
                e = TreeNode::branch("ArrayAccess", vec![e, idx]);
            } else if self.at_sep("::") {
                return Err(self.unsupported("method reference"));
            } else {
                return Ok(e);
            }
        }
    }

    // ---- compilation units ------------------------------------------------

    /// Parses `package`/`import` headers and top-level class or interface
    /// declarations, returning every method and constructor in source order.
    pub fn parse_compilation_unit(&mut self, source: &str) -> PResult<Vec<MethodInfo>> {
        let mut methods = Vec::new();
        if self.at_kw("package") {
            self.skip_past(";")?;
        }
        while self.at_kw("import") {
            self.skip_past(";")?;
        }
        while !self.is_done() {
            if self.at_sep(";") {
                self.bump()?;
                continue;
            }
            self.annotations_and_modifiers()?;
            if self.at_kw("enum") {
                return Err(self.unsupported("enum declaration"));
            }
            if !(self.at_kw("class") || self.at_kw("interface")) {
                return Err(self.error(format!(
                    "expected class or interface declaration, found {}",
                    self.describe_next()
                )));
            }
            self.bump()?;
            self.expect_ident()?;
            self.check_no_generics()?;
            while self.at_kw("extends") || self.at_kw("implements") {
                self.bump()?;
                self.parse_reference_type()?;
                while self.at_sep(",") {
                    self.bump()?;
                    self.parse_reference_type()?;
                }
            }
            self.expect(Separator, "{")?;
            while !self.at_sep("}") {
                if self.is_done() {
                    return Err(self.error("unterminated class body"));
                }
                if let Some(m) = self.parse_member(source)? {
                    methods.push(m);
                }
            }
            self.bump()?;
        }
        Ok(methods)
    }

    fn skip_past(&mut self, text: &str) -> PResult<()> {
        while !self.at_sep(text) {
            self.bump()?;
        }
        self.bump()?;
        Ok(())
    }

    fn parse_member(&mut self, source: &str) -> PResult<Option<MethodInfo>> {
        if self.at_sep(";") {
            self.bump()?;
            return Ok(None);
        }
        let start = self.pos;
        self.annotations_and_modifiers()?;
        if self.at_sep("{") {
            // instance or static initializer
            self.parse_block()?;
            return Ok(None);
        }
        if self.at_kw("class") || self.at_kw("interface") || self.at_kw("enum") {
            return Err(self.unsupported("nested type declaration"));
        }
        let is_method = if self.at_kind(Identifier) && self.at_n(1, Separator, "(") {
            true
        } else {
            let save = self.pos;
            if self.at_kw("void") {
                self.bump()?;
            } else {
                self.parse_type()?;
            }
            let method = self.at_kind(Identifier) && self.at_n(1, Separator, "(");
            self.pos = save;
            method
        };
        if !is_method {
            // field declaration
            self.pos = start;
            self.annotations_and_modifiers()?;
            self.parse_type()?;
            self.parse_declarator()?;
            while self.at_sep(",") {
                self.bump()?;
                self.parse_declarator()?;
            }
            self.expect(Separator, ";")?;
            return Ok(None);
        }
        self.pos = start;
        let (_, mut info) = self.parse_method()?;
        let first = &self.tokens[start];
        let last = &self.tokens[self.pos - 1];
        info.source = source[first.offset..last.end_offset()].to_string();
        Ok(Some(info))
    }
}

fn qualified(category: &str, segments: &[String]) -> TreeNode {
    let mut iter = segments.iter().rev();
    let mut node = TreeNode::leaf(category, iter.next().expect("at least one segment"));
    for seg in iter {
        node = TreeNode::new(category, Some(seg.clone()), vec![node]);
    }
    node
}

fn wrap_array(base: TreeNode, dims: usize) -> TreeNode {
    if dims == 0 {
        base
    } else {
        TreeNode::branch(
            "ArrayType",
            vec![base, TreeNode::branch("ArrayDimensions", Vec::new())],
        )
    }
}

/// Parses a single method declaration covering the whole token stream.
pub fn parse_method(tokens: &[Token]) -> Result<Ast, JavaError> {
    let mut p = Parser::new(tokens);
    if p.is_done() {
        return Err(p.error("empty input: expected a method declaration"));
    }
    let (tree, _) = p.parse_method()?;
    if !p.is_done() {
        return Err(p.error(format!(
            "unexpected {} after method declaration",
            p.describe_next()
        )));
    }
    Ok(Ast::from_tree(tree))
}

#[cfg(test)]
mod tests {
    use super::super::lexer::tokenize;
    use super::*;

    fn parse(src: &str) -> Result<Ast, JavaError> {
        parse_method(&tokenize(src)?)
    }

    #[test]
    fn minimal_method() {
        let ast = parse("void f(){}").unwrap();
        let root = ast.root();
        assert_eq!(root.category, "MethodDeclaration");
        assert_eq!(root.token.as_deref(), Some("f"));
        let block = root
            .children
            .iter()
            .map(|&c| ast.node(c))
            .find(|n| n.category == "Block")
            .unwrap();
        assert!(block.children.is_empty());
    }

    #[test]
    fn binary_operation_with_literal_children() {
        let ast = parse("int f(){return 1+2;}").unwrap();
        let bin = ast
            .nodes()
            .iter()
            .find(|n| n.category == "BinaryOperation")
            .unwrap();
        assert_eq!(bin.token.as_deref(), Some("+"));
        let kids: Vec<_> = bin.children.iter().map(|&c| ast.node(c)).collect();
        assert_eq!(kids.len(), 2);
        assert!(kids.iter().all(|k| k.category == "Literal"));
        assert_eq!(kids[0].token.as_deref(), Some("1"));
        assert_eq!(kids[1].token.as_deref(), Some("2"));
    }

    #[test]
    fn reference_tree_for_return_sum() {
        // MethodDeclaration(f)
        //   BasicType(int)  FormalParameters  Block
        //     ReturnStatement
        //       Expression
        //         BinaryOperation(+)  Literal(1)  Literal(2)
        let ast = parse("int f(){return 1+2;}").unwrap();
        let cats: Vec<&str> = ast.nodes().iter().map(|n| n.category.as_str()).collect();
        assert_eq!(
            cats,
            [
                "MethodDeclaration",
                "BasicType",
                "FormalParameters",
                "Block",
                "ReturnStatement",
                "Expression",
                "BinaryOperation",
                "Literal",
                "Literal"
            ]
        );
        let simplified = ast.simplify();
        // FormalParameters, ReturnStatement, Expression and the single-child
        // Block disappear.
        let cats: Vec<&str> = simplified
            .nodes()
            .iter()
            .map(|n| n.category.as_str())
            .collect();
        assert_eq!(
            cats,
            [
                "MethodDeclaration",
                "BasicType",
                "BinaryOperation",
                "Literal",
                "Literal"
            ]
        );
    }

    #[test]
    fn lambda_is_unsupported() {
        let err = parse("void f(){ run(() -> go()); }").unwrap_err();
        assert!(matches!(err, JavaError::Unsupported { .. }), "{err:?}");
        assert!(err.to_string().contains("unsupported construct"));
        let err = parse("void f(){ list.forEach(x -> use(x)); }").unwrap_err();
        assert!(matches!(err, JavaError::Unsupported { .. }), "{err:?}");
    }

    #[test]
    fn other_exclusions_are_unsupported() {
        for src in [
            "void f(){ List<String> xs = make(); }",
            "void f(){ try { a(); } catch (E e) { } }",
            "void f(){ switch (x) { } }",
            "@SuppressWarnings(\"x\") void f(){}",
            "void f(){ Object o = new Object() { }; }",
            "<T> void f(){}",
        ] {
            let err = parse(src).unwrap_err();
            assert!(
                matches!(err, JavaError::Unsupported { .. }),
                "{src}: {err:?}"
            );
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse("void f(){ int = 3; }").unwrap_err();
        match err {
            JavaError::Parse { line, column, .. } => assert_eq!((line, column), (1, 15)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn statements_and_expressions() {
        let src = r#"
            public static int count(int[] xs, final String name) throws IOException {
                int total = 0, k;
                for (int i = 0; i < xs.length; i++) {
                    if (xs[i] > 0 && !name.isEmpty()) total += xs[i]; else continue;
                }
                for (int x : xs) { total = total + (x % 2 == 0 ? x : -x); }
                while (total > 100) total >>= 1;
                do { k = (int) total; } while (k < 0);
                Foo.Bar b = new Foo.Bar(name, new int[3]);
                if (b instanceof Foo.Bar) { return this.size(); }
                throw new IllegalStateException("bad " + name);
            }
        "#;
        let ast = parse(src).unwrap();
        assert_eq!(ast.root().token.as_deref(), Some("count"));
        assert!(ast
            .nodes()
            .iter()
            .any(|n| n.category == "EnhancedForControl"));
        assert!(ast.nodes().iter().any(|n| n.category == "Cast"));
        assert!(ast
            .nodes()
            .iter()
            .any(|n| n.category == "TernaryExpression"));
    }

    #[test]
    fn compilation_unit_methods_and_spans() {
        let src = "package a.b;\nimport java.util.List;\npublic class C {\n  private int n = 3;\n  C(int n) { this.n = n; }\n  int get() { return n; }\n  abstract void g(String s);\n}\n";
        let toks = tokenize(src).unwrap();
        let methods = Parser::new(&toks).parse_compilation_unit(src).unwrap();
        let names: Vec<_> = methods.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["C", "get", "g"]);
        assert_eq!(methods[1].source, "int get() { return n; }");
        assert_eq!(methods[2].param_types, ["String"]);
        assert!(!methods[2].has_body);
    }
}
