"""
Keypoint program language
Restricted, side-effect-free statements that define target positions for keypoints

    grasp(shoe)                                   # or push(shoe)
    target[1] = mid(kp(11), kp(12)) + vec(0, 0, 0.03)
    target[2] = kp(3) + offset_along(8, 7, 0.13) - kp(8)
    done = true

Pose-baseline programs use `pose[object] = (x, y, z, roll, pitch, yaw)` instead of target lines.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import pyparsing as pp

from ..sim.scene import SceneModel

logger = logging.getLogger(__name__)

pp.ParserElement.enable_packrat()

DIRECTIVES = ("grasp", "push")


class ProgramError(ValueError):
    """Program rejected by the parser or the scene validator"""

    def __init__(self, reason: str, line: int = 0, column: int = 0):
        self.reason = reason
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {reason}")


# AST

@dataclass(frozen=True)
class Number:
    value: float
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Kp:
    label: int
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Vec:
    x: float
    y: float
    z: float
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Mid:
    a: "Expr"
    b: "Expr"
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Centroid:
    labels: Tuple[int, ...]
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class OffsetAlong:
    a: int
    b: int
    distance: float
    col: int = field(default=0, compare=False)


Expr = Union[Number, Kp, Vec, Add, Sub, Mul, Mid, Centroid, OffsetAlong]


@dataclass(frozen=True)
class Assignment:
    label: int
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Directive:
    kind: str  # grasp | push
    object_id: str


@dataclass(frozen=True)
class PoseAssignment:
    object_id: str
    values: Tuple[float, float, float, float, float, float]  # x, y, z, roll, pitch, yaw
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class KeypointProgram:
    statements: Tuple[Assignment, ...] = ()
    directive: Optional[Directive] = None
    done: bool = False
    raw_text: str = field(default="", compare=False)

    @property
    def target_labels(self) -> List[int]:
        return [s.label for s in self.statements]


@dataclass(frozen=True)
class PoseProgram:
    poses: Tuple[PoseAssignment, ...] = ()
    directive: Optional[Directive] = None
    done: bool = False
    raw_text: str = field(default="", compare=False)


# Grammar

def _node(cls):
    def action(s, loc, toks):
        return cls(*toks, col=pp.col(loc, s))
    return action


def _fold(s, loc, toks):
    items = toks[0]
    node = items[0]
    for op, rhs in zip(items[1::2], items[2::2]):
        cls = {"+": Add, "-": Sub, "*": Mul}[op]
        node = cls(node, rhs, col=node.col)
    return node


LPAR, RPAR, COMMA, LBRACK, RBRACK, EQ = map(pp.Suppress, "()[],=")

real = pp.Regex(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?").set_name("number")
real.set_parse_action(lambda toks: float(toks[0]))
label = pp.Regex(r"\d+").set_name("keypoint label")
label.set_parse_action(lambda toks: int(toks[0]))
identifier = pp.Regex(r"[A-Za-z_][A-Za-z0-9_]*").set_name("object id")

expr = pp.Forward().set_name("expression")

number_term = real.copy().add_parse_action(_node(Number))
kp_term = (pp.Keyword("kp").suppress() + LPAR + label + RPAR).set_parse_action(_node(Kp))
vec_term = (pp.Keyword("vec").suppress() + LPAR + real + COMMA + real + COMMA + real + RPAR) \
    .set_parse_action(_node(Vec))
mid_term = (pp.Keyword("mid").suppress() + LPAR + expr + COMMA + expr + RPAR).set_parse_action(_node(Mid))
centroid_term = (pp.Keyword("centroid").suppress() + LPAR + pp.Group(label + pp.ZeroOrMore(COMMA + label)) + RPAR) \
    .set_parse_action(lambda s, loc, toks: Centroid(tuple(toks[0]), col=pp.col(loc, s)))
offset_term = (pp.Keyword("offset_along").suppress() + LPAR + label + COMMA + label + COMMA + real + RPAR) \
    .set_parse_action(_node(OffsetAlong))

operand = kp_term | vec_term | mid_term | centroid_term | offset_term | number_term
expr <<= pp.infix_notation(operand, [
    (pp.Literal("*"), 2, pp.OpAssoc.LEFT, _fold),
    (pp.one_of("+ -"), 2, pp.OpAssoc.LEFT, _fold),
])

directive_stmt = (pp.one_of(" ".join(DIRECTIVES), as_keyword=True)("kind") + LPAR + identifier("object") + RPAR)
done_stmt = pp.Keyword("done").suppress() + EQ + pp.one_of("true false True False", as_keyword=True)("flag")
target_stmt = pp.Keyword("target").suppress() + LBRACK + label("label") + RBRACK + EQ + expr("expr")
pose_stmt = (pp.Keyword("pose").suppress() + LBRACK + identifier("object") + RBRACK + EQ + LPAR
             + pp.Group(real + 5 * (COMMA + real))("values") + RPAR)

keypoint_line = (pp.Group(directive_stmt)("directive") | pp.Group(done_stmt)("done")
                 | pp.Group(target_stmt)("target")) + pp.StringEnd()
pose_line = (pp.Group(directive_stmt)("directive") | pp.Group(done_stmt)("done")
             | pp.Group(pose_stmt)("pose")) + pp.StringEnd()


# Type checking

def expr_type(node: Expr, line: int = 0) -> str:
    """'vector' or 'scalar'; raises ProgramError on ill-typed expressions"""
    if isinstance(node, Number):
        return "scalar"
    if isinstance(node, (Kp, Vec, Centroid, OffsetAlong)):
        return "vector"
    if isinstance(node, Mid):
        for child in (node.a, node.b):
            if expr_type(child, line) != "vector":
                raise ProgramError("type error: mid expects two vectors", line, child.col)
        return "vector"
    if isinstance(node, Mul):
        left, right = expr_type(node.left, line), expr_type(node.right, line)
        if left != "scalar":
            raise ProgramError("type error: the left factor of * must be a number", line, node.left.col)
        return right
    if isinstance(node, (Add, Sub)):
        for child in (node.left, node.right):
            if expr_type(child, line) != "vector":
                raise ProgramError("type error: numbers may only appear as factors of *", line, child.col)
        return "vector"
    raise ProgramError(f"type error: unknown node {type(node).__name__}", line, 0)


def referenced_labels(node: Expr) -> List[int]:
    if isinstance(node, Kp):
        return [node.label]
    if isinstance(node, Centroid):
        return list(node.labels)
    if isinstance(node, OffsetAlong):
        return [node.a, node.b]
    if isinstance(node, (Add, Sub, Mul)):
        return referenced_labels(node.left) + referenced_labels(node.right)
    if isinstance(node, Mid):
        return referenced_labels(node.a) + referenced_labels(node.b)
    return []


def _label_columns(node: Expr) -> List[Tuple[int, int]]:
    if isinstance(node, (Kp, Centroid, OffsetAlong)):
        return [(lbl, node.col) for lbl in referenced_labels(node)]
    if isinstance(node, (Add, Sub, Mul)):
        return _label_columns(node.left) + _label_columns(node.right)
    if isinstance(node, Mid):
        return _label_columns(node.a) + _label_columns(node.b)
    return []


# Parsing

def _program_lines(text: str):
    """(line number, content) of statement lines; comments and markdown fences removed"""
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].rstrip()
        if not content.strip() or content.strip().startswith("```"):
            continue
        yield number, content


def _parse_line(grammar: pp.ParserElement, content: str, number: int) -> pp.ParseResults:
    try:
        return grammar.parse_string(content, parse_all=True)
    except pp.ParseBaseException as e:
        raise ProgramError(f"syntax error ({e.msg})", number, e.col) from None


def _check_directive(directive: Optional[Directive], scene: SceneModel, number: int, column: int) -> None:
    ids = {obj.id for obj in scene.objects}
    if directive.object_id not in ids:
        raise ProgramError(f"unknown object {directive.object_id}", number, column)
    if not scene.object(directive.object_id).manipulable:
        raise ProgramError(f"object {directive.object_id} is not manipulable", number, column)


def parse_program(text: str, scene: SceneModel) -> KeypointProgram:
    """
    Parse and validate a keypoint program against a labeled scene

    Args:
        text: Program text, one statement per line
        scene: Scene whose unpruned keypoint labels the program may reference

    Returns:
        Validated program

    Raises:
        ProgramError: with line, column and reason
    """
    known = set(scene.labels)
    statements: List[Assignment] = []
    directive: Optional[Directive] = None
    done = False
    last_line = 0

    for number, content in _program_lines(text):
        last_line = number
        result = _parse_line(keypoint_line, content, number)
        indent = len(content) - len(content.lstrip()) + 1
        if "directive" in result:
            if directive is not None:
                raise ProgramError("more than one grasp/push directive", number, indent)
            directive = Directive(result.directive.kind, result.directive.object)
            _check_directive(directive, scene, number, indent)
        elif "done" in result:
            done = result.done.flag.lower() == "true"
        else:
            stmt = result.target
            target_label, node = stmt.label, stmt.expr
            if target_label not in known:
                raise ProgramError(f"unknown keypoint label {target_label}", number, indent)
            if any(s.label == target_label for s in statements):
                raise ProgramError(f"target[{target_label}] assigned twice", number, indent)
            for ref, column in _label_columns(node):
                if ref not in known:
                    raise ProgramError(f"unknown keypoint label {ref}", number, column)
            if expr_type(node, number) != "vector":
                raise ProgramError("type error: target must be a vector", number, node.col)
            statements.append(Assignment(target_label, node, line=number))

    if not done:
        if directive is None:
            raise ProgramError("missing grasp/push directive", last_line, 1)
        if not statements:
            raise ProgramError("no target statements", last_line, 1)
    if directive is not None:
        owned = {kp.label for kp in scene.keypoints_of(directive.object_id)}
        for stmt in statements:
            if stmt.label not in owned:
                raise ProgramError(
                    f"target[{stmt.label}] is not a keypoint of {directive.object_id}", stmt.line, 1)
    elif statements:
        raise ProgramError("target statements need a grasp/push directive", statements[0].line, 1)

    logger.debug(f"Parsed program: {len(statements)} targets, directive={directive}, done={done}")
    return KeypointProgram(tuple(statements), directive, done, raw_text=text)


def parse_pose_program(text: str, scene: SceneModel) -> PoseProgram:
    """Parse the pose-baseline form; poses may only be given for the directive's object"""
    poses: List[PoseAssignment] = []
    directive: Optional[Directive] = None
    done = False
    last_line = 0

    for number, content in _program_lines(text):
        last_line = number
        result = _parse_line(pose_line, content, number)
        indent = len(content) - len(content.lstrip()) + 1
        if "directive" in result:
            if directive is not None:
                raise ProgramError("more than one grasp/push directive", number, indent)
            directive = Directive(result.directive.kind, result.directive.object)
            _check_directive(directive, scene, number, indent)
        elif "done" in result:
            done = result.done.flag.lower() == "true"
        else:
            object_id = result.pose.object
            if object_id not in {obj.id for obj in scene.objects}:
                raise ProgramError(f"unknown object {object_id}", number, indent)
            if any(p.object_id == object_id for p in poses):
                raise ProgramError(f"pose[{object_id}] assigned twice", number, indent)
            poses.append(PoseAssignment(object_id, tuple(float(v) for v in result.pose["values"]), line=number))

    if not done:
        if directive is None:
            raise ProgramError("missing grasp/push directive", last_line, 1)
        if not poses:
            raise ProgramError("no pose statements", last_line, 1)
    for pose in poses:
        if directive is None or pose.object_id != directive.object_id:
            raise ProgramError(f"pose[{pose.object_id}] is not the interaction object", pose.line, 1)
    return PoseProgram(tuple(poses), directive, done, raw_text=text)


# Printing

def _number(value: float) -> str:
    return repr(float(value))


def format_expr(node: Expr) -> str:
    if isinstance(node, Number):
        return _number(node.value)
    if isinstance(node, Kp):
        return f"kp({node.label})"
    if isinstance(node, Vec):
        return f"vec({_number(node.x)}, {_number(node.y)}, {_number(node.z)})"
    if isinstance(node, Mid):
        return f"mid({format_expr(node.a)}, {format_expr(node.b)})"
    if isinstance(node, Centroid):
        return f"centroid({', '.join(str(lbl) for lbl in node.labels)})"
    if isinstance(node, OffsetAlong):
        return f"offset_along({node.a}, {node.b}, {_number(node.distance)})"
    if isinstance(node, Add):
        return f"{format_expr(node.left)} + {_wrap(node.right, (Add, Sub))}"
    if isinstance(node, Sub):
        return f"{format_expr(node.left)} - {_wrap(node.right, (Add, Sub))}"
    if isinstance(node, Mul):
        return f"{_wrap(node.left, (Add, Sub))} * {_wrap(node.right, (Add, Sub, Mul))}"
    raise TypeError(f"cannot format {node!r}")


def _wrap(node: Expr, kinds) -> str:
    text = format_expr(node)
    return f"({text})" if isinstance(node, kinds) else text


def format_program(program: Union[KeypointProgram, PoseProgram]) -> str:
    """Canonical text of a program; parsing it again yields an equal AST"""
    lines = []
    if program.directive is not None:
        lines.append(f"{program.directive.kind}({program.directive.object_id})")
    if isinstance(program, PoseProgram):
        for pose in program.poses:
            lines.append(f"pose[{pose.object_id}] = ({', '.join(_number(v) for v in pose.values)})")
    else:
        for stmt in program.statements:
            lines.append(f"target[{stmt.label}] = {format_expr(stmt.expr)}")
    if program.done:
        lines.append("done = true")
    return "\n".join(lines) + "\n"
