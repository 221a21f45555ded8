import pytest
from hypothesis import given
from hypothesis.strategies import sampled_from

from invlab.plugins import apply, group_by_contract
from invlab.plugins.contracts import (
    Contract,
    InvalidContractError,
    InvalidPluginError,
    contract,
    plugin,
)


@given(
    sampled_from(
        [Contract.OnBatch, Contract.OnEpoch, Contract.OnBatch | Contract.OnEpoch]
    )
)
def test_contract_returns_contract_associated_with_plugin_decorator(c: Contract):
    @plugin(c)
    def foo():
        ...

    assert contract(foo) is c


def test_plugin_decorator_raises_with_invalid_contract():
    with pytest.raises(InvalidContractError):

        @plugin(2)
        def foo():
            ...


def test_plugin_decorator_raises_without_contract():
    with pytest.raises(InvalidContractError):

        @plugin
        def foo():
            ...


def test_contract_raises_with_invalid_plugin():
    def foo():
        ...

    with pytest.raises(InvalidPluginError):
        contract(foo)


def test_plugin_is_exported_by_the_invlab_plugins_module():
    try:
        from invlab.plugins import plugin  # noqa: F401
    except ImportError:
        pytest.fail("plugin should be exported by invlab.plugins")


def test_Contract_is_exported_by_the_invlab_plugins_module():
    try:
        from invlab.plugins import Contract  # noqa: F401
    except ImportError:
        pytest.fail("Contract should be exported by invlab.plugins")


class TestApply:
    def test_return_init_unchanged_without_plugins(self):
        x = object()
        assert apply([], x) is x

    def test_return_plugin_result(self):
        @plugin(Contract.OnEpoch)
        def plugin_a(x: str) -> str:
            return x + "a"

        assert apply([plugin_a], "z") == "za"

    def test_runs_plugins_in_succession_on_input(self):
        @plugin(Contract.OnEpoch)
        def plugin_a(x: str) -> str:
            return x + "a"

        @plugin(Contract.OnEpoch)
        def plugin_b(x: str) -> str:
            return x + "b"

        assert apply((plugin_a, plugin_b), "") == "ab"
        assert apply((plugin_b, plugin_a, plugin_b), "") == "bab"

    def test_it_passes_extra_arguments_to_every_plugin(self):
        @plugin(Contract.OnBatch)
        def repeat(x: str, times: int) -> str:
            return x * times

        assert apply((repeat, repeat), "a", 2) == "aaaa"


class TestGroupByContract:
    def test_return_empty_dict_when_no_plugins(self):
        assert group_by_contract([]) == {}

    def test_index_plugins_with_simple_contracts_by_their_contract(self):
        @plugin(Contract.OnBatch)
        def plugin_a():
            pass

        @plugin(Contract.OnBatch)
        def plugin_b():
            pass

        @plugin(Contract.OnEpoch)
        def plugin_z():
            pass

        assert group_by_contract((plugin_a, plugin_b, plugin_z)) == {
            Contract.OnEpoch: [plugin_z],
            Contract.OnBatch: [plugin_a, plugin_b],
        }

    def test_index_plugins_with_complex_contracts_by_their_basic_contracts(self):
        @plugin(Contract.OnBatch)
        def plugin_batch():
            pass

        @plugin(Contract.OnBatch | Contract.OnEpoch)
        def plugin_multi():
            pass

        assert group_by_contract((plugin_batch, plugin_multi)) == {
            Contract.OnBatch: [plugin_batch, plugin_multi],
            Contract.OnEpoch: [plugin_multi],
        }
