"""Scalar expressions in named coordinates: parsing, evaluation, exact
symbolic differentiation, and compilation to fast python callables.

The grammar is a conventional precedence-climbing calculator grammar over
+, -, *, /, integer ^, unary minus, parentheses, numbers, named variables
and a fixed set of smooth functions:

    sin cos tan exp log sqrt atan2 estep gate bump

estep(t) is exp(-1/t) for t > 0 and 0 otherwise (smooth, not analytic).
gate(g, e) is the product g*e except that e is not evaluated when g
evaluates to exactly 0.0; its derivative is gate(g',e) + gate(g,e').
bump(a, b, t) is sugar for exp(4)*estep(s)*estep(1-s) with s=(t-a)/(b-a):
supported on [a,b], equal to 1 at the midpoint.

'^' takes an integer literal exponent and binds tighter than unary minus,
so -x^2 parses as -(x^2). Everything is immutable after construction.
"""

import math


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Raised on malformed input; .offset is the byte offset in the source."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalError(ExprError):
    pass


class DomainError(ExprError):
    """A domain predicate failed at an evaluation point."""


# ---------------------------------------------------------------- nodes ---

class Expr:
    __slots__ = ()

    # printing precedences: Add/Sub 1, Neg 1.5, Mul/Div 2, Pow 4, atoms 5
    prec = 5

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return pow_(self, n)

    def __eq__(self, other):
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self):
        return hash((type(self).__name__, self._key()))

    def __repr__(self):
        return f"{type(self).__name__}({str(self)!r})"

    def d(self, var):
        raise NotImplementedError

    def eval(self, env):
        raise NotImplementedError

    def variables(self):
        out = set()
        self._collect_vars(out)
        return out

    def _collect_vars(self, out):
        pass

    def _pysrc(self, names, ctx):
        raise NotImplementedError


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def _key(self):
        return self.value

    def d(self, var):
        return Const(0.0)

    def eval(self, env):
        return self.value

    def __str__(self):
        if math.isfinite(self.value) and self.value == int(self.value) \
                and abs(self.value) < 1e16:
            return str(int(self.value))
        return repr(self.value)

    def _pysrc(self, names, ctx):
        if not math.isfinite(self.value):
            return f"(float({str(self.value)!r}))"
        return f"({self.value!r})"


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def _key(self):
        return self.name

    def d(self, var):
        return Const(1.0 if self.name == var else 0.0)

    def eval(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise EvalError(f"unbound variable {self.name!r}") from None

    def __str__(self):
        return self.name

    def _collect_vars(self, out):
        out.add(self.name)

    def _pysrc(self, names, ctx):
        return names[self.name]


class _Binary(Expr):
    __slots__ = ("a", "b")
    op = "?"

    def __init__(self, a, b):
        self.a = a
        self.b = b

    def _key(self):
        return (self.a, self.b)

    def _collect_vars(self, out):
        self.a._collect_vars(out)
        self.b._collect_vars(out)

    def __str__(self):
        left = _paren(self.a, self.prec, left=True)
        right = _paren(self.b, self.prec, left=False)
        return f"{left} {self.op} {right}"


class Add(_Binary):
    __slots__ = ()
    op = "+"
    prec = 1

    def d(self, var):
        return add(self.a.d(var), self.b.d(var))

    def eval(self, env):
        return self.a.eval(env) + self.b.eval(env)

    def _pysrc(self, names, ctx):
        return f"({self.a._pysrc(names, ctx)} + {self.b._pysrc(names, ctx)})"


class Sub(_Binary):
    __slots__ = ()
    op = "-"
    prec = 1

    def d(self, var):
        return sub(self.a.d(var), self.b.d(var))

    def eval(self, env):
        return self.a.eval(env) - self.b.eval(env)

    def _pysrc(self, names, ctx):
        return f"({self.a._pysrc(names, ctx)} - {self.b._pysrc(names, ctx)})"


class Mul(_Binary):
    __slots__ = ()
    op = "*"
    prec = 2

    def d(self, var):
        return add(mul(self.a.d(var), self.b), mul(self.a, self.b.d(var)))

    def eval(self, env):
        return self.a.eval(env) * self.b.eval(env)

    def _pysrc(self, names, ctx):
        return f"({self.a._pysrc(names, ctx)} * {self.b._pysrc(names, ctx)})"


class Div(_Binary):
    __slots__ = ()
    op = "/"
    prec = 2

    def d(self, var):
        # (a/b)' = (a'b - ab')/b^2
        num = sub(mul(self.a.d(var), self.b), mul(self.a, self.b.d(var)))
        return div(num, pow_(self.b, 2))

    def eval(self, env):
        bv = self.b.eval(env)
        if bv == 0.0:
            raise EvalError("division by zero")
        return self.a.eval(env) / bv

    def _pysrc(self, names, ctx):
        return f"({self.a._pysrc(names, ctx)} / {self.b._pysrc(names, ctx)})"


class Neg(Expr):
    __slots__ = ("a",)
    prec = 1.5

    def __init__(self, a):
        self.a = a

    def _key(self):
        return self.a

    def d(self, var):
        return neg(self.a.d(var))

    def eval(self, env):
        return -self.a.eval(env)

    def __str__(self):
        return f"-{_paren(self.a, self.prec, left=False)}"

    def _collect_vars(self, out):
        self.a._collect_vars(out)

    def _pysrc(self, names, ctx):
        return f"(-{self.a._pysrc(names, ctx)})"


class Pow(Expr):
    """Integer power; the exponent is a plain int, not a subexpression."""

    __slots__ = ("a", "n")
    prec = 4

    def __init__(self, a, n):
        self.a = a
        self.n = int(n)

    def _key(self):
        return (self.a, self.n)

    def d(self, var):
        return mul(mul(Const(self.n), pow_(self.a, self.n - 1)), self.a.d(var))

    def eval(self, env):
        av = self.a.eval(env)
        if self.n < 0 and av == 0.0:
            raise EvalError("zero to a negative power")
        return av ** self.n

    def __str__(self):
        base = _paren(self.a, self.prec, left=True)
        return f"{base}^{self.n}"

    def _collect_vars(self, out):
        self.a._collect_vars(out)

    def _pysrc(self, names, ctx):
        return f"({self.a._pysrc(names, ctx)} ** {self.n})"


class Fun1(Expr):
    """One-argument named function: sin cos tan exp log sqrt estep."""

    __slots__ = ("name", "a")

    def __init__(self, name, a):
        self.name = name
        self.a = a

    def _key(self):
        return (self.name, self.a)

    def d(self, var):
        u, du = self.a, self.a.d(var)
        if self.name == "sin":
            return mul(Fun1("cos", u), du)
        if self.name == "cos":
            return neg(mul(Fun1("sin", u), du))
        if self.name == "tan":
            return mul(add(Const(1.0), pow_(Fun1("tan", u), 2)), du)
        if self.name == "exp":
            return mul(Fun1("exp", u), du)
        if self.name == "log":
            return div(du, u)
        if self.name == "sqrt":
            return div(du, mul(Const(2.0), Fun1("sqrt", u)))
        if self.name == "estep":
            # d/dt exp(-1/t) = exp(-1/t)/t^2; the gate keeps 1/t^2
            # unevaluated wherever estep is identically zero
            return mul(Gate(Fun1("estep", u), div(Const(1.0), pow_(u, 2))), du)
        raise ExprError(f"no derivative rule for {self.name}")

    def eval(self, env):
        av = self.a.eval(env)
        if self.name == "estep":
            return _estep(av)
        try:
            return getattr(math, self.name)(av)
        except ValueError as e:
            raise EvalError(f"{self.name}({av}): {e}") from None

    def __str__(self):
        return f"{self.name}({self.a})"

    def _collect_vars(self, out):
        self.a._collect_vars(out)

    def _pysrc(self, names, ctx):
        fn = "_estep" if self.name == "estep" else f"math.{self.name}"
        return f"{fn}({self.a._pysrc(names, ctx)})"


class Atan2(Expr):
    __slots__ = ("a", "b")

    def __init__(self, a, b):
        self.a = a
        self.b = b

    def _key(self):
        return (self.a, self.b)

    def d(self, var):
        # d atan2(y, x) = (y' x - y x') / (x^2 + y^2)
        y, x = self.a, self.b
        num = sub(mul(y.d(var), x), mul(y, x.d(var)))
        return div(num, add(pow_(x, 2), pow_(y, 2)))

    def eval(self, env):
        return math.atan2(self.a.eval(env), self.b.eval(env))

    def __str__(self):
        return f"atan2({self.a}, {self.b})"

    def _collect_vars(self, out):
        self.a._collect_vars(out)
        self.b._collect_vars(out)

    def _pysrc(self, names, ctx):
        return f"math.atan2({self.a._pysrc(names, ctx)}, {self.b._pysrc(names, ctx)})"


class Gate(Expr):
    """g*e, with e not evaluated when g == 0.0 exactly."""

    __slots__ = ("g", "e")

    def __init__(self, g, e):
        self.g = g
        self.e = e

    def _key(self):
        return (self.g, self.e)

    def d(self, var):
        return add(Gate(self.g.d(var), self.e), Gate(self.g, self.e.d(var)))

    def eval(self, env):
        gv = self.g.eval(env)
        if gv == 0.0:
            return 0.0
        return gv * self.e.eval(env)

    def __str__(self):
        return f"gate({self.g}, {self.e})"

    def _collect_vars(self, out):
        self.g._collect_vars(out)
        self.e._collect_vars(out)

    def _pysrc(self, names, ctx):
        tmp = ctx.fresh()
        gsrc = self.g._pysrc(names, ctx)
        esrc = self.e._pysrc(names, ctx)
        return f"(0.0 if ({tmp} := {gsrc}) == 0.0 else {tmp} * {esrc})"


def _paren(child, parent_prec, left):
    s = str(child)
    cp = child.prec
    if left:
        need = cp < parent_prec
    else:
        need = cp <= parent_prec
    # chains of equal-precedence left-assoc operators never wrap the left arm
    if left and cp == parent_prec:
        need = False
    return f"({s})" if need else s


def _estep(t):
    if t <= 0.0:
        return 0.0
    try:
        return math.exp(-1.0 / t)
    except OverflowError:  # 1/t overflowed to inf for subnormal t
        return 0.0


def _wrap(v):
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float)):
        return Const(v)
    raise TypeError(f"cannot use {type(v).__name__} in an expression")


# --------------------------------------------- folding smart constructors --

def _const(e):
    return e.value if isinstance(e, Const) else None


def add(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None and math.isfinite(ca + cb):
        return Const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Add(a, b)


def sub(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None and math.isfinite(ca - cb):
        return Const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    return Sub(a, b)


def mul(a, b):
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None and math.isfinite(ca * cb):
        return Const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return Const(0.0)
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    return Mul(a, b)


def div(a, b):
    ca, cb = _const(a), _const(b)
    if cb is not None and cb != 0.0:
        if ca is not None and math.isfinite(ca / cb):
            return Const(ca / cb)
        if cb == 1.0:
            return a
    if ca == 0.0 and cb != 0.0:
        return Const(0.0)
    return Div(a, b)


def neg(a):
    ca = _const(a)
    if ca is not None:
        return Const(-ca)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def pow_(a, n):
    n = int(n)
    if n == 0:
        return Const(1.0)
    if n == 1:
        return a
    ca = _const(a)
    if ca is not None and not (ca == 0.0 and n < 0):
        try:
            v = ca ** n
        except OverflowError:
            v = math.inf
        if math.isfinite(v):
            return Const(v)
    return Pow(a, n)


def fun(name, *args):
    """Build a function application with constant folding."""
    if name == "atan2":
        a, b = args
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(math.atan2(a.value, b.value))
        return Atan2(a, b)
    if name == "gate":
        g, e = args
        if _const(g) == 0.0:
            return Const(0.0)
        return Gate(g, e)
    if name == "bump":
        a, b, t = args
        s = div(sub(t, a), sub(b, a))
        return mul(mul(fun("exp", Const(4.0)), fun("estep", s)),
                   fun("estep", sub(Const(1.0), s)))
    (a,) = args
    if isinstance(a, Const):
        try:
            v = _estep(a.value) if name == "estep" else getattr(math, name)(a.value)
            if math.isfinite(v):
                return Const(v)
        except (ValueError, OverflowError):
            pass
    return Fun1(name, a)


FUNCTION_ARITY = {
    "sin": 1, "cos": 1, "tan": 1, "exp": 1, "log": 1, "sqrt": 1,
    "estep": 1, "atan2": 2, "gate": 2, "bump": 3,
}


# --------------------------------------------------------------- parsing ---

def _tokenize(source):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in "+-*/^(),":
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"bad number {text!r}", i)
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.take()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self):
        if self.peek()[0] == "-":
            self.take()
            return neg(self.unary())
        return self.power()

    def power(self):
        e = self.atom()
        while self.peek()[0] == "^":
            self.take()
            negate = False
            if self.peek()[0] == "-":
                self.take()
                negate = True
            tok = self.take()
            if tok[0] != "num" or tok[1] != int(tok[1]):
                raise ParseError("exponent must be an integer literal", tok[2])
            e = pow_(e, -int(tok[1]) if negate else int(tok[1]))
        return e

    def atom(self):
        tok = self.take()
        kind, value, offset = tok
        if kind == "num":
            return Const(value)
        if kind == "(":
            e = self.expr()
            closing = self.take()
            if closing[0] != ")":
                raise ParseError("unbalanced parentheses", closing[2])
            return e
        if kind == "name":
            if self.peek()[0] == "(":
                return self.call(value, offset)
            if value in self.variables:
                return Var(value)
            raise ParseError(f"unknown identifier {value!r}", offset)
        if kind == "end":
            raise ParseError("unexpected end of input", offset)
        raise ParseError(f"unexpected {value!r}", offset)

    def call(self, name, offset):
        if name not in FUNCTION_ARITY:
            raise ParseError(f"unknown function {name!r}", offset)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == ",":
            self.take()
            args.append(self.expr())
        closing = self.take()
        if closing[0] != ")":
            raise ParseError("unbalanced parentheses", closing[2])
        arity = FUNCTION_ARITY[name]
        if len(args) != arity:
            raise ParseError(f"{name} takes {arity} argument(s), got {len(args)}",
                             offset)
        return fun(name, *args)


def parse(source, variables):
    """Parse source text over the given variable names into an Expr."""
    if not variables:
        raise ValueError("variables must be a nonempty list of names")
    if len(set(variables)) != len(variables):
        raise ValueError("variable names must be distinct")
    if not source.strip():
        raise ParseError("empty input", 0)
    return _Parser(_tokenize(source), set(variables)).parse()


def differentiate(e, var):
    """Exact symbolic derivative of e with respect to the named variable."""
    return e.d(var)


def substitute(e, mapping):
    """Replace variables by expressions (used for symbolic composition)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Neg):
        return neg(substitute(e.a, mapping))
    if isinstance(e, Pow):
        return pow_(substitute(e.a, mapping), e.n)
    if isinstance(e, Fun1):
        return fun(e.name, substitute(e.a, mapping))
    if isinstance(e, Atan2):
        return fun("atan2", substitute(e.a, mapping), substitute(e.b, mapping))
    if isinstance(e, Gate):
        return fun("gate", substitute(e.g, mapping), substitute(e.e, mapping))
    if isinstance(e, Add):
        return add(substitute(e.a, mapping), substitute(e.b, mapping))
    if isinstance(e, Sub):
        return sub(substitute(e.a, mapping), substitute(e.b, mapping))
    if isinstance(e, Mul):
        return mul(substitute(e.a, mapping), substitute(e.b, mapping))
    if isinstance(e, Div):
        return div(substitute(e.a, mapping), substitute(e.b, mapping))
    raise ExprError(f"cannot substitute into {type(e).__name__}")


# ----------------------------------------------------------- compilation ---

class _Ctx:
    def __init__(self):
        self.counter = 0

    def fresh(self):
        self.counter += 1
        return f"_g{self.counter}"


_COMPILE_GLOBALS = {"math": math, "_estep": _estep, "__builtins__": {}}


def compile_exprs(exprs, variables):
    """Compile a list of Exprs over the same variables into one callable
    taking positional floats and returning a list of floats."""
    names = {v: f"_v{i}" for i, v in enumerate(variables)}
    ctx = _Ctx()
    bodies = [e._pysrc(names, ctx) for e in exprs]
    params = ", ".join(names[v] for v in variables)
    src = f"def _f({params}):\n    return [{', '.join(bodies)}]\n"
    scope = {}
    exec(compile(src, "<expr>", "exec"), dict(_COMPILE_GLOBALS), scope)
    return scope["_f"]


def compile_expr(e, variables):
    f = compile_exprs([e], variables)
    return lambda *xs: f(*xs)[0]


# -------------------------------------------------------------- SmoothMap --

class SmoothMap:
    """Expression-backed map from an open subset of R^n to R^m.

    components: list of Exprs over `variables`; `domain` is a list of Exprs
    that must all evaluate strictly positive at admissible points.
    """

    def __init__(self, variables, components, domain=()):
        self.variables = list(variables)
        self.components = list(components)
        self.domain = list(domain)
        self.n = len(self.variables)
        self.m = len(self.components)
        for e in list(self.components) + list(self.domain):
            extra = e.variables() - set(self.variables)
            if extra:
                raise ExprError(f"expression uses undeclared variables {sorted(extra)}")
        self._fn = compile_exprs(self.components, self.variables)
        self._dom_fn = (compile_exprs(self.domain, self.variables)
                        if self.domain else None)
        self._jac = None

    @classmethod
    def from_strings(cls, variables, sources, domain_sources=()):
        comps = [parse(s, variables) for s in sources]
        dom = [parse(s, variables) for s in domain_sources]
        return cls(variables, comps, dom)

    def in_domain(self, x):
        if self._dom_fn is None:
            return True
        try:
            vals = self._dom_fn(*x)
        except (EvalError, ValueError, ZeroDivisionError, OverflowError):
            return False
        return all(v > 0.0 for v in vals)

    def __call__(self, x):
        if not self.in_domain(x):
            raise DomainError(f"point {tuple(float(v) for v in x)} violates the domain predicate")
        return self._fn(*x)

    def eval_unchecked(self, x):
        return self._fn(*x)

    def jacobian_exprs(self):
        if self._jac is None:
            self._jac = [[c.d(v) for v in self.variables] for c in self.components]
            flat = [e for row in self._jac for e in row]
            self._jac_fn = compile_exprs(flat, self.variables)
        return self._jac

    def jacobian(self, x):
        """m x n matrix of exact symbolic partials evaluated at x."""
        self.jacobian_exprs()
        flat = self._jac_fn(*x)
        return [flat[i * self.n:(i + 1) * self.n] for i in range(self.m)]


__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Neg", "Pow",
    "Fun1", "Atan2", "Gate", "parse", "differentiate", "substitute", "fun",
    "add", "sub", "mul", "div", "neg", "pow_", "compile_expr", "compile_exprs",
    "SmoothMap", "ExprError", "ParseError", "EvalError", "DomainError",
]
