"""Hand-written lexer and recursive-descent parser for the supported SQL subset.

The parser builds the unresolved logical DAG directly; names stay unbound
(``Name`` nodes) until ``resolve`` runs against a catalog.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from ..catalog import parse_date
from .expressions import (Arith, Compare, DateLit, Expr, InList, IntLit, Logical, Name, render,
                          TextLit, walk)
from .logical import (AggCall, Aggregate, Distinct, Filter, Join, Limit, LogicalOp,
                      LogicalPlan, Project, Scan, Sort, WindowNumber)


class SqlError(ValueError):
    """Base class for front-end failures; ``stage`` names the pipeline step."""

    stage = "parse"


class SqlSyntaxError(SqlError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line, self.col = line, col


class UnsupportedError(SqlSyntaxError):
    pass


KEYWORDS = {
    "select", "distinct", "from", "where", "group", "by", "order", "asc", "desc", "limit",
    "with", "as", "join", "inner", "on", "and", "or", "in", "over", "partition", "left",
    "right", "full", "outer", "cross", "union", "intersect", "except", "having", "not",
    "null", "exists", "case", "between", "like", "is", "recursive", "natural", "using",
}

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|--[^\n]*)
  | (?P<int>\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><>|!=|<=|>=|[=<>+\-*(),.;/])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # ident, keyword, int, string, op, eof
    value: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if not m:
            raise SqlSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "ws":
            pass
        elif kind == "ident":
            low = value.lower()
            tokens.append(Token("keyword" if low in KEYWORDS else "ident", low, line, col))
        elif kind == "string":
            tokens.append(Token("string", value[1:-1].replace("''", "'"), line, col))
        elif kind == "op":
            tokens.append(Token("op", "<>" if value == "!=" else value, line, col))
        else:
            tokens.append(Token(kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


@dataclass
class _Item:
    kind: str  # expr, agg, window, star
    expr: Optional[Expr] = None
    agg: Optional[AggCall] = None
    window: Optional[tuple] = None
    alias: Optional[str] = None


_AGG_NAMES = {"count", "sum", "min", "max"}
_WINDOW_NAMES = {"row_no", "row_number"}


class Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def at(self, kind: str, value: Optional[str] = None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def at_kw(self, *words: str) -> bool:
        return self.tok.kind == "keyword" and self.tok.value in words

    def accept_kw(self, word: str) -> bool:
        if self.at_kw(word):
            self.advance()
            return True
        return False

    def accept_op(self, op: str) -> bool:
        if self.at("op", op):
            self.advance()
            return True
        return False

    def error(self, message: str) -> SqlSyntaxError:
        return SqlSyntaxError(message, self.tok.line, self.tok.col)

    def unsupported(self, what: str) -> UnsupportedError:
        return UnsupportedError(f"{what} unsupported", self.tok.line, self.tok.col)

    def expect_kw(self, word: str) -> Token:
        if not self.at_kw(word):
            raise self.error(f"expected {word.upper()}, found {self._describe()}")
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.at("op", op):
            raise self.error(f"expected {op!r}, found {self._describe()}")
        return self.advance()

    def expect_ident(self) -> str:
        if self.tok.kind != "ident":
            raise self.error(f"expected identifier, found {self._describe()}")
        return self.advance().value

    def _describe(self) -> str:
        t = self.tok
        return "end of input" if t.kind == "eof" else repr(t.value)

    # statements
    def parse_statement(self) -> LogicalPlan:
        ctes: dict[str, LogicalOp] = {}
        if self.accept_kw("with"):
            if self.at_kw("recursive"):
                raise self.unsupported("recursive WITH")
            while True:
                name = self.expect_ident()
                if name in ctes:
                    raise self.error(f"duplicate WITH name {name!r}")
                self.expect_kw("as")
                self.expect_op("(")
                if self.at_kw("with"):
                    raise self.unsupported("nested WITH")
                ctes[name] = self.parse_select(in_cte=True)
                self.expect_op(")")
                if not self.accept_op(","):
                    break
        root = self.parse_select(in_cte=False)
        self.accept_op(";")
        if not self.at("eof"):
            raise self.error(f"unexpected {self._describe()} after end of statement")
        return LogicalPlan(root, ctes)

    def parse_select(self, in_cte: bool) -> LogicalOp:
        self.expect_kw("select")
        distinct = self.accept_kw("distinct")
        items = self.parse_items()
        self.expect_kw("from")
        op = self.parse_from()
        if self.accept_kw("where"):
            op = Filter(predicate=self.parse_expr(), children=[op])
        group_by: list[Expr] = []
        if self.accept_kw("group"):
            self.expect_kw("by")
            group_by = self.parse_expr_list()
        if self.at_kw("having"):
            raise self.unsupported("HAVING")
        order: list[tuple[Expr, bool]] = []
        if self.accept_kw("order"):
            self.expect_kw("by")
            order = self.parse_order_list()
        limit = None
        if self.at_kw("limit"):
            if in_cte:
                raise self.unsupported("LIMIT inside WITH")
            self.advance()
            if not self.at("int"):
                raise self.error("LIMIT expects an integer")
            limit = int(self.advance().value)
        if self.at_kw("union", "intersect", "except"):
            raise self.unsupported(f"set operation {self.tok.value.upper()}")

        op = self.build(op, items, group_by, distinct)
        if order:
            op = Sort(keys=order, children=[op])
        if limit is not None:
            op = Limit(count=limit, children=[op])
        return op

    def build(self, op: LogicalOp, items: list[_Item], group_by: list[Expr],
              distinct: bool) -> LogicalOp:
        aggs = [it for it in items if it.kind == "agg"]
        windows = [it for it in items if it.kind == "window"]
        star = any(it.kind == "star" for it in items)
        if star and len(items) > 1:
            raise self.error("'*' cannot be combined with other select items")
        if (aggs or group_by) and (windows or star):
            raise self.unsupported("window functions or '*' with aggregation")

        if aggs or group_by:
            group_names = [g.name if isinstance(g, Name) else f"_grp{i}" for i, g in enumerate(group_by)]
            agg_calls, agg_names = [], []
            for k, it in enumerate(aggs):
                agg_calls.append(it.agg)
                agg_names.append(it.alias or (it.agg.fn.split("_")[0].lower() if len(aggs) == 1
                                              else f"{it.agg.fn.lower()}_{k}"))
            op = Aggregate(group_by=group_by, aggs=agg_calls, names=group_names + agg_names,
                           children=[op])
            out_exprs, out_names = [], []
            agg_index = 0
            for it in items:
                if it.kind == "agg":
                    out_exprs.append(Name(None, agg_names[agg_index]))
                    out_names.append(agg_names[agg_index])
                    agg_index += 1
                    continue
                try:
                    g = group_by.index(it.expr)
                except ValueError:
                    raise self.error("select item must appear in GROUP BY or be an aggregate") from None
                out_exprs.append(Name(None, group_names[g]))
                out_names.append(it.alias or group_names[g])
            identity = out_names == op.names and all(
                isinstance(e, Name) and e.name == n for e, n in zip(out_exprs, op.names))
            if not identity:
                op = Project(exprs=out_exprs, names=out_names, children=[op])
        elif not star:
            for it in windows:
                partition, order_by = it.window
                op = WindowNumber(partition_by=partition, order_by=order_by,
                                  out_name=it.alias or "row_no", children=[op])
            exprs, names = [], []
            for k, it in enumerate(items):
                if it.kind == "window":
                    name = it.alias or "row_no"
                    exprs.append(Name(None, name))
                    names.append(name)
                else:
                    exprs.append(it.expr)
                    names.append(it.alias or (it.expr.name if isinstance(it.expr, Name) else f"_col{k}"))
            op = Project(exprs=exprs, names=names, children=[op])
        if distinct:
            op = Distinct(columns=None, children=[op])
        return op

    def parse_items(self) -> list[_Item]:
        items = []
        while True:
            items.append(self.parse_item())
            if not self.accept_op(","):
                return items

    def parse_item(self) -> _Item:
        if self.accept_op("*"):
            return _Item("star")
        t = self.tok
        if t.kind == "ident" and self.peek().kind == "op" and self.peek().value == "(":
            if t.value in _AGG_NAMES:
                item = _Item("agg", agg=self.parse_agg())
            elif t.value in _WINDOW_NAMES:
                item = _Item("window", window=self.parse_window())
            else:
                raise self.unsupported(f"function {t.value}()")
        else:
            item = _Item("expr", expr=self.parse_expr())
        if self.accept_kw("as"):
            item.alias = self.expect_ident()
        elif self.tok.kind == "ident":
            item.alias = self.advance().value
        return item

    def parse_agg(self) -> AggCall:
        fn = self.advance().value.upper()
        self.expect_op("(")
        if fn == "COUNT" and self.accept_op("*"):
            self.expect_op(")")
            return AggCall("COUNT", None)
        if self.accept_kw("distinct"):
            if fn != "COUNT":
                raise self.unsupported(f"{fn}(DISTINCT ...)")
            arg = self.parse_expr()
            self.expect_op(")")
            return AggCall("COUNT_DISTINCT", arg)
        arg = self.parse_expr()
        self.expect_op(")")
        return AggCall(fn, arg)

    def parse_window(self) -> tuple:
        self.advance()
        self.expect_op("(")
        self.expect_op(")")
        self.expect_kw("over")
        self.expect_op("(")
        partition: list[Expr] = []
        if self.accept_kw("partition"):
            self.expect_kw("by")
            partition = self.parse_expr_list()
        order: list[tuple[Expr, bool]] = []
        if self.accept_kw("order"):
            self.expect_kw("by")
            order = self.parse_order_list()
        self.expect_op(")")
        return partition, order

    def parse_order_list(self) -> list[tuple[Expr, bool]]:
        out = []
        while True:
            e = self.parse_additive()
            asc = True
            if self.accept_kw("desc"):
                asc = False
            else:
                self.accept_kw("asc")
            out.append((e, asc))
            if not self.accept_op(","):
                return out

    def parse_expr_list(self) -> list[Expr]:
        out = [self.parse_expr()]
        while self.accept_op(","):
            out.append(self.parse_expr())
        return out

    def parse_from(self) -> LogicalOp:
        op = self.parse_table_ref()
        while True:
            if self.at_kw("left", "right", "full", "outer", "natural"):
                raise self.unsupported("OUTER JOIN" if not self.at_kw("natural") else "NATURAL JOIN")
            if self.accept_op(","):
                op = Join(predicate=None, children=[op, self.parse_table_ref()])
            elif self.accept_kw("cross"):
                self.expect_kw("join")
                op = Join(predicate=None, children=[op, self.parse_table_ref()])
            elif self.at_kw("inner", "join"):
                self.accept_kw("inner")
                self.expect_kw("join")
                right = self.parse_table_ref()
                if self.at_kw("using"):
                    raise self.unsupported("JOIN ... USING")
                self.expect_kw("on")
                op = Join(predicate=self.parse_expr(), children=[op, right])
            else:
                return op

    def parse_table_ref(self) -> Scan:
        if self.at("op", "("):
            raise self.unsupported("subquery in FROM")
        name = self.expect_ident()
        alias = None
        if self.accept_kw("as"):
            alias = self.expect_ident()
        elif self.tok.kind == "ident":
            alias = self.advance().value
        return Scan(table=name, alias=alias)

    # expressions: OR < AND < comparison < additive
    def parse_expr(self) -> Expr:
        lhs = self.parse_and()
        while self.accept_kw("or"):
            lhs = Logical("OR", lhs, self.parse_and())
        return lhs

    def parse_and(self) -> Expr:
        lhs = self.parse_comparison()
        while self.accept_kw("and"):
            lhs = Logical("AND", lhs, self.parse_comparison())
        return lhs

    def parse_comparison(self) -> Expr:
        if self.at_kw("not", "exists"):
            raise self.unsupported(self.tok.value.upper())
        lhs = self.parse_additive()
        t = self.tok
        if t.kind == "op" and t.value in ("=", "<>", "<", "<=", ">", ">="):
            self.advance()
            return Compare(t.value, lhs, self.parse_additive())
        if self.accept_kw("in"):
            if self.at("op", "("):
                raise self.unsupported("IN (subquery or value list)")
            return InList(lhs, self.expect_ident())
        if self.at_kw("between", "like", "is", "not"):
            raise self.unsupported(self.tok.value.upper())
        return lhs

    def parse_additive(self) -> Expr:
        lhs = self.parse_primary()
        while self.at("op", "+") or self.at("op", "-"):
            op = self.advance().value
            lhs = Arith(op, lhs, self.parse_primary())
        return lhs

    def parse_primary(self) -> Expr:
        t = self.tok
        if t.kind == "int":
            self.advance()
            if self.tok.kind == "ident" and self.tok.value in ("days", "day"):
                self.advance()
                return IntLit(int(t.value), "days")
            return IntLit(int(t.value))
        if t.kind == "string":
            self.advance()
            return TextLit(t.value)
        if t.kind == "op" and t.value == "(":
            self.advance()
            if self.at_kw("select"):
                raise self.unsupported("scalar subquery")
            e = self.parse_expr()
            self.expect_op(")")
            return e
        if t.kind == "op" and t.value == "-" and self.peek().kind == "int":
            self.advance()
            return IntLit(-int(self.advance().value))
        if t.kind == "keyword" and t.value == "null":
            raise self.unsupported("NULL literal")
        if t.kind == "ident":
            if t.value == "date" and self.peek().kind == "string":
                self.advance()
                lit = self.advance()
                try:
                    return DateLit(parse_date(lit.value))
                except ValueError:
                    raise SqlSyntaxError(f"invalid date literal {lit.value!r}", lit.line, lit.col) from None
            if self.peek().kind == "op" and self.peek().value == "(":
                if t.value in _AGG_NAMES or t.value in _WINDOW_NAMES:
                    raise self.unsupported(f"{t.value}() inside an expression")
                raise self.unsupported(f"function {t.value}()")
            self.advance()
            if self.accept_op("."):
                return Name(t.value, self.expect_ident())
            return Name(None, t.value)
        raise self.error(f"unexpected {self._describe()}")


def parse(sql_text: str) -> LogicalPlan:
    return Parser(sql_text).parse_statement()


def names_in(expr: Expr) -> list[Name]:
    return [e for e in walk(expr) if isinstance(e, Name)]


def _render_order(keys) -> str:
    return ", ".join(render(e) + ("" if asc else " DESC") for e, asc in keys)


def _render_select(op: LogicalOp) -> str:
    limit = sort = None
    if isinstance(op, Limit):
        limit, op = op, op.child
    if isinstance(op, Sort):
        sort, op = op, op.child
    distinct = isinstance(op, Distinct)
    if distinct:
        op = op.child
    project = op if isinstance(op, Project) else None
    if project is not None:
        op = op.child
    windows = {}
    while isinstance(op, WindowNumber):
        windows[op.out_name] = op
        op = op.child
    agg = op if isinstance(op, Aggregate) else None
    if agg is not None:
        op = op.child
    where = None
    if isinstance(op, Filter):
        where, op = op.predicate, op.child

    items = []
    if agg is not None:
        n_groups = len(agg.group_by)
        by_name = {}
        for i, name in enumerate(agg.names):
            if i < n_groups:
                by_name[name] = render(agg.group_by[i])
            else:
                by_name[name] = _render_agg(agg.aggs[i - n_groups])
        pairs = zip(project.exprs, project.names) if project else ((Name(None, n), n) for n in agg.names)
        for e, name in pairs:
            items.append(f"{by_name[e.name]} AS {name}")
    elif project is not None:
        for e, name in zip(project.exprs, project.names):
            if isinstance(e, Name) and e.qualifier is None and e.name in windows:
                w = windows[e.name]
                over = []
                if w.partition_by:
                    over.append("PARTITION BY " + ", ".join(render(p) for p in w.partition_by))
                if w.order_by:
                    over.append("ORDER BY " + _render_order(w.order_by))
                items.append(f"row_no() OVER ({' '.join(over)}) AS {name}")
            else:
                items.append(f"{render(e)} AS {name}")
    else:
        items.append("*")

    parts = ["SELECT " + ("DISTINCT " if distinct else "") + ", ".join(items),
             "FROM " + _render_from(op)]
    if where is not None:
        parts.append("WHERE " + render(where))
    if agg is not None and agg.group_by:
        parts.append("GROUP BY " + ", ".join(render(g) for g in agg.group_by))
    if sort is not None:
        parts.append("ORDER BY " + _render_order(sort.keys))
    if limit is not None:
        parts.append(f"LIMIT {limit.count}")
    return "\n".join(parts)


def _render_agg(call: AggCall) -> str:
    if call.arg is None:
        return "COUNT(*)"
    if call.fn == "COUNT_DISTINCT":
        return f"COUNT(DISTINCT {render(call.arg)})"
    return f"{call.fn}({render(call.arg)})"


def _render_from(op: LogicalOp) -> str:
    if isinstance(op, Scan):
        return op.table + (f" {op.alias}" if op.alias else "")
    if isinstance(op, Join):
        left, right = _render_from(op.children[0]), _render_from(op.children[1])
        if op.predicate is None:
            return f"{left} CROSS JOIN {right}"
        return f"{left} JOIN {right} ON {render(op.predicate)}"
    raise TypeError(f"cannot render {op.kind} in FROM")


def render_sql(plan: LogicalPlan) -> str:
    """Pretty-print an unresolved plan back to SQL that parses to the same plan."""
    text = ""
    if plan.ctes:
        text = "WITH " + ",\n".join(f"{name} AS (\n{_render_select(op)})"
                                    for name, op in plan.ctes.items()) + "\n"
    return text + _render_select(plan.root)


def signature(op: LogicalOp):
    """Structural identity of an unresolved operator tree (ids and schemas ignored)."""
    fields = {k: v for k, v in vars(op).items() if k not in ("children", "schema", "id")}
    for k, v in fields.items():
        if isinstance(v, list):
            fields[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return (op.kind, tuple(sorted(fields.items(), key=lambda kv: kv[0])),
            tuple(signature(c) for c in op.children))


def plan_signature(plan: LogicalPlan):
    return (signature(plan.root), tuple((n, signature(op)) for n, op in plan.ctes.items()))
