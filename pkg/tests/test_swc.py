import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuroseg import errors
from neuroseg.swc import (
    SwcMorphology,
    SwcNode,
    bounding_box,
    parse_swc,
    segments,
    write_swc,
)

f32 = st.floats(min_value=-1e4, max_value=1e4, width=32)
radius32 = st.floats(min_value=0.0009765625, max_value=1024.0, width=32)  # 2^-10 .. 2^10


@st.composite
def morphologies(draw):
    n = draw(st.integers(min_value=0, max_value=30))
    nodes = []
    for i in range(1, n + 1):
        parent = -1 if i == 1 else draw(st.integers(min_value=1, max_value=i - 1))
        # Earlier ids as parents guarantees a forest.
        nodes.append(SwcNode(
            id=i,
            type_code=draw(st.integers(min_value=-5, max_value=9)),
            x=draw(f32), y=draw(f32), z=draw(f32),
            radius=draw(radius32),
            parent_id=parent if draw(st.booleans()) or i > 1 else -1,
        ))
    return SwcMorphology(nodes)


def test_minimal_valid_file():
    m = parse_swc("1 1 0 0 0 1.0 -1")
    assert len(m) == 1
    assert m.nodes[0].parent_id == -1
    assert m.nodes[0].radius == 1.0


def test_comment_only_is_empty():
    assert len(parse_swc("# comment only\n")) == 0
    assert len(parse_swc("")) == 0
    assert len(parse_swc("\n\n  \n")) == 0


def test_crlf_accepted():
    m = parse_swc("1 1 0 0 0 1 -1\r\n2 1 1 0 0 1 1\r\n")
    assert len(m) == 2


def test_two_cycle_detected():
    with pytest.raises(errors.CycleDetected):
        parse_swc("1 1 0 0 0 1 2\n2 1 1 0 0 1 1")


def test_self_parent_cycle():
    with pytest.raises(errors.CycleDetected):
        parse_swc("1 1 0 0 0 1 1")


def test_malformed_field_count_carries_line_number():
    with pytest.raises(errors.MalformedLine) as exc:
        parse_swc("# header\n1 1 0 0 0 1 -1\n2 1 0 0 1\n")
    assert exc.value.line_no == 3


def test_malformed_number():
    with pytest.raises(errors.MalformedLine) as exc:
        parse_swc("1 1 zero 0 0 1 -1")
    assert exc.value.line_no == 1


def test_duplicate_id():
    with pytest.raises(errors.DuplicateId) as exc:
        parse_swc("1 1 0 0 0 1 -1\n1 1 1 0 0 1 -1")
    assert exc.value.line_no == 2


def test_dangling_parent():
    with pytest.raises(errors.DanglingParent):
        parse_swc("1 1 0 0 0 1 -1\n2 1 1 0 0 1 9")


def test_nonpositive_radius():
    with pytest.raises(errors.NonPositiveRadius) as exc:
        parse_swc("1 1 0 0 0 0 -1")
    assert exc.value.line_no == 1


def test_nonpositive_id_rejected():
    with pytest.raises(errors.MalformedLine):
        parse_swc("0 1 0 0 0 1 -1")


def test_nodes_before_parents_ok():
    m = parse_swc("2 1 1 0 0 1 1\n1 1 0 0 0 1 -1")
    assert len(m) == 2
    assert len(m.roots()) == 1


def test_write_empty():
    assert write_swc(SwcMorphology([])) == ""


def test_write_single_node_roundtrip():
    m = parse_swc("7 3 1.5 -2.25 0.125 0.75 -1")
    text = write_swc(m)
    assert parse_swc(text).nodes == m.nodes


def test_type_code_preserved_verbatim():
    m = parse_swc("1 42 0 0 0 1 -1")
    assert m.nodes[0].type_code == 42
    assert " 42 " in write_swc(m)


@settings(max_examples=60)
@given(morphologies())
def test_roundtrip_field_for_field(m):
    assert parse_swc(write_swc(m)).nodes == m.nodes


@given(morphologies())
def test_segment_count_is_nodes_minus_roots(m):
    assert len(segments(m)) == len(m.nodes) - len(m.roots())


def test_segments_single_root_empty():
    assert segments(parse_swc("1 1 0 0 0 1 -1")) == []


def test_segments_root_child_radii():
    m = parse_swc("1 1 0 0 0 2 -1\n2 1 3 0 0 0.5 1")
    (seg,) = segments(m)
    assert seg.r0 == 2.0 and seg.r1 == 0.5
    assert np.array_equal(seg.p0, [0, 0, 0])
    assert np.array_equal(seg.p1, [3, 0, 0])


def test_segments_binary_tree():
    lines = ["1 1 0 0 0 1 -1"]
    for i in range(2, 8):
        lines.append(f"{i} 1 {i} 0 0 1 {i // 2}")
    m = parse_swc("\n".join(lines))
    assert len(segments(m)) == 6


def test_bounding_box_single_node():
    m = parse_swc("1 1 5 5 5 2 -1")
    lo, hi = bounding_box(m, 0.0)
    assert np.array_equal(lo, [3, 3, 3])
    assert np.array_equal(hi, [7, 7, 7])
    lo, hi = bounding_box(m, 1.0)
    assert np.array_equal(lo, [2, 2, 2])
    assert np.array_equal(hi, [8, 8, 8])


def test_bounding_box_two_nodes_componentwise():
    m = parse_swc("1 1 0 0 0 1 -1\n2 1 10 -4 2 3 1")
    lo, hi = bounding_box(m, 0.0)
    assert np.array_equal(lo, [-1, -7, -1])
    assert np.array_equal(hi, [13, 1, 5])


def test_bounding_box_empty_raises():
    with pytest.raises(errors.EmptyMorphology):
        bounding_box(SwcMorphology([]), 0.0)
