import numpy as np
import pytest

from netexp import io
from netexp.errors import DataError, NetexpWarning


@pytest.fixture
def write(tmp_path):
    def write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text)
        return path

    return write


def test_load_graph(write):
    g, report = io.load_graph(write("edges.csv", "src,dst\n0,1\n1,2\n"))
    assert g.n == 3
    assert g.out_neighbors(1).tolist() == [0, 2]
    assert (report.n, report.edges, report.duplicates, report.self_loops) == (3, 2, 0, 0)


def test_load_graph_drops_duplicates(write):
    path = write("edges.csv", "src,dst\n0,1\n1,0\n2,2\n1,2\n")
    with pytest.warns(NetexpWarning, match="dropped 1 duplicate edge\\(s\\) and 1 self-loop"):
        g, report = io.load_graph(path)
    assert report.edges == 2
    assert (report.duplicates, report.self_loops) == (1, 1)
    assert g.adjacency.nnz == 4


def test_load_graph_directed(write):
    g, report = io.load_graph(write("edges.csv", "src,dst\n0,1\n1,0\n"), directed=True)
    assert report.duplicates == 0
    assert g.directed
    assert g.adjacency.nnz == 2


def test_load_graph_first_two_columns(write):
    g, _ = io.load_graph(write("edges.csv", "from,to,weight\n0,3,1.5\n"), n=5)
    assert g.n == 5
    assert g.out_neighbors(3).tolist() == [0]


VECTORS_BAD_EDGES = (
    ("src,dst\n0,1\n1,2\n", 2, "column dst row 2 has unit id 2 outside \\[0, 2\\)"),
    ("src,dst\n0,a\n", None, "column dst row 1 is not an integer"),
    ("src,dst\n-1,0\n", None, "column src row 1 has unit id -1"),
    ("only\n0\n", None, "needs two columns"),
)


@pytest.mark.parametrize("text, n, match", VECTORS_BAD_EDGES)
def test_load_graph_errors(write, text, n, match):
    with pytest.raises(DataError, match=match):
        io.load_graph(write("edges.csv", text), n=n)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="file not found"):
        io.load_graph(tmp_path / "nope.csv")


NODES = """\
id,eligible,block,D,Y,x1,x2,p,group,name
2,no,1,0,3.5,0.1,1,0.2,7,c
0,yes,0,1,1.0,0.3,2,0.5,7,a
1,1,,0,2.0,0.5,3,0.4,8,b
"""


def test_load_nodes(write):
    nodes = io.load_nodes(write("nodes.csv", NODES))
    assert nodes.n == 3
    assert nodes.eligible.tolist() == [True, True, False]
    assert nodes.block.tolist() == [0, io.MISSING_BLOCK, 1]
    assert nodes.require_d().tolist() == [1, 0, 0]
    assert nodes.require_y().tolist() == [1.0, 2.0, 3.5]
    assert nodes.x_names == ("x1", "x2")
    np.testing.assert_allclose(nodes.x, [[0.3, 2], [0.5, 3], [0.1, 1]])
    assert nodes.p.tolist() == [0.5, 0.4, 0.2]
    assert set(nodes.extra) == {"group"}
    columns = nodes.columns()
    assert columns["group"].tolist() == [7, 8, 7]
    assert columns["x2"].tolist() == [2.0, 3.0, 1.0]


def test_load_nodes_minimal(write):
    nodes = io.load_nodes(write("nodes.csv", "id\n1\n0\n"))
    assert nodes.eligible.all()
    assert nodes.block.tolist() == [-1, -1]
    assert nodes.d is None and nodes.y is None and nodes.p is None
    assert nodes.x.shape == (2, 0)
    with pytest.raises(DataError, match="column D is required"):
        nodes.require_d()
    with pytest.raises(DataError, match="column Y is required"):
        nodes.require_y()


VECTORS_BAD_NODES = (
    ("id,Y\n0,1\n0,2\n", None, "repeats unit 0"),
    ("id,Y\n0,1\n2,2\n", None, "unit 2 outside \\[0, 2\\)"),
    ("id,Y\n0,1\n2,2\n", 3, "missing unit 1"),
    ("id,p\n0,0.5\n1,abc\n", None, "column p of unit 1 is missing or not numeric"),
    ("id,Y\n0,1\n1,\n", None, "column Y of unit 1"),
    ("id,eligible\n0,maybe\n", None, "column eligible of unit 0 is not boolean"),
    ("id,D\n0,0.5\n", None, "column D row 1 is not an integer"),
    ("unit,Y\n0,1\n", None, "column id is required"),
)


@pytest.mark.parametrize("text, n, match", VECTORS_BAD_NODES)
def test_load_nodes_errors(write, text, n, match):
    with pytest.raises(DataError, match=match):
        io.load_nodes(write("nodes.csv", text), n=n)
