import math
from importlib import resources

import pytest

from conftest import V_PEAK
from vacsec.scenario import (
    ScenarioError, bundled_scenario, bundled_scenarios, load_scenario, parse_scenario, resolve_scenario,
)

TEXT = resources.files("vacsec.data").joinpath("table2_table3.scenario").read_text()


def edit(old: str, new: str) -> str:
    assert old in TEXT
    return TEXT.replace(old, new)


class TestBundled:
    def test_all_parse(self):
        names = bundled_scenarios()
        assert {"table2_table3", "fig5_vac_enable", "fig7_load_step", "fig7_voltage_step", "fig8_stochastic"} <= set(names)
        for n in names:
            assert bundled_scenario(n).name == n

    def test_table_values(self, table_scenario):
        s = table_scenario
        assert s.network.nodes == ("N1", "N2", "N3", "N4")
        assert [c.id for c in s.converters] == ["DG1", "DG2", "DG3"]
        assert s.network.dg_nodes == {"DG1": "N2", "DG2": "N3", "DG3": "N4"}
        dg2 = s.converter("DG2")
        assert dg2.setpoints.p_ref == 12e3 and dg2.params.s_n == 15e3
        assert dg2.gains.r_v == 0.2255 and dg2.gains.l_v == 0.0032
        assert s.network.loads["N1"].p == 50e3
        assert s.secondary.first_at == 3.0 and s.secondary.period == 4.0
        assert s.secondary.comm_delay == pytest.approx(0.1)
        assert s.network.grid_source.v.d == pytest.approx(V_PEAK)
        assert s.bounds.r_v_min == 0.1 and s.bounds.l_v_min == 5e-4

    def test_line_admittance_units(self, table_scenario):
        y = table_scenario.network.lines[0].y.to_complex()
        assert 1 / y == pytest.approx(complex(0.7, 2 * math.pi * 50 * 0.9e-3))

    def test_events_sorted(self):
        s = bundled_scenario("fig5_vac_enable")
        assert [e.at for e in s.events] == [1.0, 3.0, 5.0, 6.0]
        assert s.events[-1].kind == "load_step" and s.events[-1].dp == 20e3

    def test_resolve(self, tmp_path):
        assert resolve_scenario("table2_table3").name == "table2_table3"
        assert resolve_scenario("table2_table3.scenario").name == "table2_table3"
        p = tmp_path / "mine.scenario"
        p.write_text(TEXT)
        assert load_scenario(p).network.nodes == ("N1", "N2", "N3", "N4")
        with pytest.raises(FileNotFoundError):
            resolve_scenario(tmp_path / "absent.scenario")


class TestUnits:
    def test_prefixes(self):
        s = parse_scenario(edit("r: 0.7 ohm, l: 0.9 mH", "r: 700 mohm, l: 900 uH"))
        y = s.network.lines[0].y.to_complex()
        assert 1 / y == pytest.approx(complex(0.7, 2 * math.pi * 50 * 0.9e-3))

    def test_wrong_dimension(self):
        with pytest.raises(ScenarioError, match="not a W quantity"):
            parse_scenario(edit("N2: {p: 10 kW", "N2: {p: 10 kvar"))

    def test_missing_unit(self):
        with pytest.raises(ScenarioError, match="missing unit"):
            parse_scenario(edit("r: 1.0 ohm", "r: 1.0"))

    def test_unknown_unit(self):
        with pytest.raises(ScenarioError, match="unknown unit"):
            parse_scenario(edit("l: 1.2 mH", "l: 1.2 furlong"))

    def test_percent(self):
        s = parse_scenario(edit("voltage: 1.0 pu", "voltage: 102 %"))
        assert s.network.grid_source.v.d == pytest.approx(1.02 * V_PEAK)


class TestValidation:
    def test_missing_weight_names_node(self):
        with pytest.raises(ScenarioError, match="N3"):
            parse_scenario(edit("N3: 1.0, N4: 1.0", "N4: 1.0"))

    def test_weight_out_of_range(self):
        with pytest.raises(ScenarioError, match="N4"):
            parse_scenario(edit("N4: 1.0}", "N4: 1.5}"))

    def test_negative_dt(self):
        with pytest.raises(ScenarioError, match="dt") as exc:
            parse_scenario(edit("dt: 10 ms", "dt: -10 ms"))
        assert exc.value.line is not None

    def test_error_carries_line(self):
        with pytest.raises(ScenarioError) as exc:
            parse_scenario(edit("{from: N2, to: N3,", "{from: N2, to: N9,"))
        assert "N9" in str(exc.value)
        assert exc.value.line == TEXT.splitlines().index("  - {from: N2, to: N3, r: 1.0 ohm, l: 1.2 mH}") + 1

    def test_unknown_converter_node(self):
        with pytest.raises(ScenarioError, match="converters.DG3"):
            parse_scenario(edit("DG3: {node: N4", "DG3: {node: N7"))

    def test_yaml_syntax(self):
        with pytest.raises(ScenarioError, match="YAML"):
            parse_scenario("nodes: [N1, N2\n")

    def test_event_order(self):
        text = TEXT + "events:\n  - {at: 5 s, type: load_step, node: N2, dp: 1 kW}\n  - {at: 2 s, type: load_step, node: N2, dp: 1 kW}\n"
        with pytest.raises(ScenarioError, match="time order"):
            parse_scenario(text)

    def test_comm_delay_shorter_than_period(self):
        with pytest.raises(ScenarioError, match="comm_delay"):
            parse_scenario(edit("comm_delay: 100 ms", "comm_delay: 5 s"))

    def test_zero_impedance(self):
        with pytest.raises(ScenarioError, match="zero impedance"):
            parse_scenario(edit("r: 1.0 ohm, l: 1.2 mH", "r: 0 ohm, l: 0 mH"))

    def test_load_model_default(self):
        s = parse_scenario(edit("loads:\n", "load_model: constant_impedance\nloads:\n"))
        assert all(ld.kind == "constant_impedance" for ld in s.network.loads.values())
