"""MATPOWER parsing, scenario schema, and the delimited output formats."""

import json

import numpy as np
import pytest

from topogrid import case_io, solve_dc
from topogrid.case_io import (
    ParseError,
    SchemaError,
    UnknownId,
    UnsupportedFeature,
    load_scenario,
    parse_matpower,
    write_matpower,
)
from topogrid.grid_model import Disconnect, Merge, Reconnect, Split, Terminal

TWO_BUS_CASE = """
function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0 0 0 1 1 0 0 1 1.1 0.9;
    2 1 50 0 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [
    1 50 0 0 0 1 100 1 100 0;
];
mpc.branch = [
    1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
"""


class TestParseMatpower:
    def test_case14_shape(self, case14):
        assert len(case14.buses) == 14
        assert len(case14.branches) == 20
        assert case14.slack == "1"
        assert case14.base_mva == 100.0

    def test_case14_injections_are_generation_minus_load(self, case14):
        assert case14.bus("1").injection == pytest.approx(2.324)   # 232.4 MW gen
        assert case14.bus("2").injection == pytest.approx(0.183)   # 40 - 21.7 MW
        assert case14.bus("3").injection == pytest.approx(-0.942)  # load only

    def test_susceptance_is_inverse_reactance(self, case14):
        assert case14.branch("1-2").susceptance == pytest.approx(1 / 0.05917)

    def test_branch_status_zero_loads_disconnected(self):
        # second (parallel) circuit carries status 0
        text = TWO_BUS_CASE.replace(
            "    1 2 0 0.1 0 0 0 0 0 0 1 -360 360;",
            "    1 2 0 0.1 0 0 0 0 0 0 1 -360 360;\n    1 2 0 0.2 0 0 0 0 0 0 0 -360 360;",
        )
        grid = parse_matpower(text)
        assert grid.branch("1-2").connected
        assert not grid.branch("1-2#2").connected

    def test_two_slack_buses_is_a_parse_error(self):
        text = TWO_BUS_CASE.replace("2 1 50", "2 3 50")
        with pytest.raises(ParseError, match="type-3"):
            parse_matpower(text)

    def test_non_numeric_row_reports_line_number(self):
        text = TWO_BUS_CASE.replace("1 2 0 0.1", "1 2 zero 0.1")
        with pytest.raises(ParseError, match=r"line \d+"):
            parse_matpower(text)

    def test_missing_base_mva(self):
        with pytest.raises(ParseError, match="baseMVA"):
            parse_matpower("mpc.bus = [\n];")

    def test_islanded_case_is_unsupported(self):
        text = TWO_BUS_CASE.replace(
            "    1 2 0 0.1 0 0 0 0 0 0 1 -360 360;",
            "    1 2 0 0.1 0 0 0 0 0 0 0 -360 360;",
        )
        with pytest.raises(UnsupportedFeature, match="island"):
            parse_matpower(text)

    def test_nonpositive_reactance_is_unsupported(self):
        text = TWO_BUS_CASE.replace("1 2 0 0.1", "1 2 0 -0.1")
        with pytest.raises(UnsupportedFeature):
            parse_matpower(text)

    def test_out_of_service_generator_ignored(self):
        text = TWO_BUS_CASE.replace("1 50 0 0 0 1 100 1", "1 50 0 0 0 1 100 0")
        grid = parse_matpower(text)
        assert grid.bus("1").injection == 0.0

    def test_per_unit_conversion(self):
        # 50 MW of load on a 100 MVA base: the single branch carries 0.5 pu.
        grid = parse_matpower(TWO_BUS_CASE)
        state = solve_dc(grid)
        assert state.flow("1-2") == pytest.approx(0.5)
        assert state.flow("1-2") * grid.base_mva == pytest.approx(50.0)


class TestRoundTrip:
    def test_parse_write_parse_is_electrically_identical(self, case14):
        again = parse_matpower(write_matpower(case14))
        assert again.topology_key() == case14.topology_key()
        for bus in case14.buses:
            assert again.bus(bus.id).injection == pytest.approx(bus.injection)
        for br in case14.branches:
            assert again.branch(br.id).susceptance == pytest.approx(br.susceptance)
        a, b = solve_dc(case14), solve_dc(again)
        assert np.max(np.abs(a.flows - b.flows)) < 1e-12

    def test_split_grids_cannot_be_serialized(self, case14):
        from topogrid.grid_model import apply_change_set

        split = Split("sub_4", frozenset({Terminal.branch_end("4-7", "from"),
                                          Terminal.branch_end("4-9", "from")}))
        with pytest.raises(UnsupportedFeature):
            write_matpower(apply_change_set(case14, [split]))


class TestScenario:
    def make(self, **kwargs):
        doc = {"version": 1, "changes": []}
        doc.update(kwargs)
        return json.dumps(doc)

    def test_empty_change_set_is_valid(self, case14):
        scenario = load_scenario(self.make(), grid=case14)
        assert scenario.changes == ()

    def test_all_kinds_parse(self, case14):
        doc = self.make(changes=[
            {"kind": "disconnect", "branch": "1-5"},
            {"kind": "reconnect", "branch": "9-10"},
            {"kind": "split", "substation": "sub_4",
             "busbar_2": [{"branch": "4-7", "end": "from"}, {"injection": True}]},
            {"kind": "merge", "substation": "sub_5"},
        ])
        scenario = load_scenario(doc)
        assert scenario.changes == (
            Disconnect("1-5"),
            Reconnect("9-10"),
            Split("sub_4", frozenset({Terminal.branch_end("4-7", "from"),
                                      Terminal.injection()})),
            Merge("sub_5"),
        )

    def test_mixed_kinds_with_reference_changes(self, case14):
        doc = self.make(
            reference_changes=[{"kind": "disconnect", "branch": "2-4"}],
            changes=[{"kind": "reconnect", "branch": "2-4"},
                     {"kind": "split", "substation": "sub_4", "busbar_2": []}],
            contingencies=["1-2"],
        )
        scenario = load_scenario(doc, grid=case14)
        assert len(scenario.reference_changes) == 1
        assert len(scenario.changes) == 2
        assert scenario.contingencies == ("1-2",)

    def test_unknown_branch_is_reported(self, case14):
        doc = self.make(changes=[{"kind": "disconnect", "branch": "l_999"}])
        with pytest.raises(UnknownId, match="l_999"):
            load_scenario(doc, grid=case14)

    def test_missing_version_is_a_schema_error(self):
        with pytest.raises(SchemaError, match="version"):
            load_scenario(json.dumps({"changes": []}))

    def test_unknown_kind_is_a_schema_error(self):
        with pytest.raises(SchemaError, match="kind"):
            load_scenario(self.make(changes=[{"kind": "explode", "branch": "1-2"}]))

    def test_malformed_terminal_is_a_schema_error(self):
        doc = self.make(changes=[
            {"kind": "split", "substation": "sub_4", "busbar_2": [{"branch": "4-7"}]}
        ])
        with pytest.raises(SchemaError, match="terminal"):
            load_scenario(doc)

    def test_not_json(self):
        with pytest.raises(SchemaError):
            load_scenario("function mpc = case14")


class TestCsvFormats:
    def test_flow_table_format(self, tmp_path):
        path = tmp_path / "flows.csv"
        case_io.write_flow_table(path, [("case14", "1-2", "ext_st", 1.0 / 3.0, 0.0)])
        lines = path.read_text().splitlines()
        assert lines[0] == "case,branch,method,flow,abs_diff"
        assert lines[1] == "case14,1-2,ext_st,0.333333333333,0"

    def test_twelve_significant_digits(self):
        assert case_io.format_value(2.0 / 3.0) == "0.666666666667"
        assert case_io.format_value(1.23456789e-11) == "1.23456789e-11"

    def test_timing_table_format(self, tmp_path):
        path = tmp_path / "timing.csv"
        case_io.write_timing_table(path, [("case14", "oracle", 0.25)])
        assert path.read_text().splitlines() == [
            "case,method,seconds",
            "case14,oracle,0.25",
        ]
