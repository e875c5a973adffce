"""Project-list loading and repository resolution."""

import pytest

from oss_health.projects import (
    Candidate,
    ProjectEntry,
    ResolutionStatus,
    load_project_list,
    mark_duplicates,
    parse_overrides,
    resolve_repo,
)


def entry(**kwargs) -> ProjectEntry:
    defaults = dict(
        name="Bitcoin",
        symbol="BTC",
        cmc_rank=1,
        website="https://bitcoin.org",
        source_location="https://github.com/bitcoin",
    )
    defaults.update(kwargs)
    return ProjectEntry(**defaults)


class TestOverrides:
    def test_parse(self):
        text = "# manual fixes\nBitcoin = bitcoin/bitcoin\nEthereum=ethereum/go-ethereum\n"
        assert parse_overrides(text) == {
            "Bitcoin": "bitcoin/bitcoin",
            "Ethereum": "ethereum/go-ethereum",
        }

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_overrides("not an assignment")

    def test_bad_repo_id_rejected(self):
        with pytest.raises(ValueError, match="owner/repo"):
            parse_overrides("Bitcoin = justaname")


class TestLoadProjectList:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "projects.csv"
        path.write_text(
            "name,symbol,cmc_rank,website,source_location,alexa_rank\n"
            "Bitcoin,BTC,1,https://bitcoin.org,https://github.com/bitcoin,9000\n"
            "Shadow,SHD,2,https://shadow.example,,\n"
        )
        entries = load_project_list(path)
        assert entries[0].alexa_rank == 9000
        assert entries[1].source_location is None
        assert entries[1].alexa_rank is None

    def test_duplicate_ranks_rejected(self, tmp_path):
        path = tmp_path / "projects.csv"
        path.write_text(
            "name,symbol,cmc_rank,website,source_location,alexa_rank\n"
            "A,A,1,https://a.example,,\n"
            "B,B,1,https://b.example,,\n"
        )
        with pytest.raises(ValueError, match="unique"):
            load_project_list(path)


class TestResolveRepo:
    def test_override_wins(self):
        res = resolve_repo(entry(), [], {"Bitcoin": "bitcoin/bitcoin"})
        assert res.status is ResolutionStatus.RESOLVED
        assert res.repo_id == "bitcoin/bitcoin"

    def test_core_label_beats_stars(self):
        candidates = [
            Candidate("org/node-impl", 500, frozenset({"core"})),
            Candidate("org/docs", 900),
        ]
        res = resolve_repo(entry(source_location="https://github.com/org"), candidates)
        assert res.repo_id == "org/node-impl"

    def test_contract_label_is_fallback(self):
        candidates = [
            Candidate("org/token-contract", 5, frozenset({"contract"})),
            Candidate("org/website", 50),
        ]
        res = resolve_repo(entry(source_location="https://github.com/org"), candidates)
        assert res.repo_id == "org/token-contract"

    def test_unlabelled_max_stars(self):
        candidates = [Candidate("org/a", 10), Candidate("org/b", 20)]
        res = resolve_repo(entry(source_location="https://github.com/org"), candidates)
        assert res.repo_id == "org/b"

    def test_no_source_location(self):
        res = resolve_repo(entry(source_location=None), [])
        assert res.status is ResolutionStatus.NOT_LISTED

    def test_foreign_host(self):
        res = resolve_repo(entry(source_location="https://gitlab.com/group/project"), [])
        assert res.status is ResolutionStatus.FOREIGN_HOST
        assert res.host == "gitlab.com"

    def test_private_listed(self):
        res = resolve_repo(entry(), None)
        assert res.status is ResolutionStatus.PRIVATE_LISTED

    def test_missing_404(self):
        res = resolve_repo(entry(), [])
        assert res.status is ResolutionStatus.MISSING_404

    def test_every_entry_gets_exactly_one_status(self):
        cases = [
            (entry(), [Candidate("org/a", 1)], {}),
            (entry(), [], {}),
            (entry(), None, {}),
            (entry(source_location=None), [], {}),
            (entry(source_location="https://bitbucket.org/x/y"), [], {}),
            (entry(), [], {"Bitcoin": "a/b"}),
        ]
        for case in cases:
            res = resolve_repo(*case)
            assert isinstance(res.status, ResolutionStatus)


class TestMarkDuplicates:
    def test_lowest_rank_keeps_repo(self):
        first = resolve_repo(entry(cmc_rank=2, name="WrappedCoin"), [], {"WrappedCoin": "a/b"})
        second = resolve_repo(entry(cmc_rank=1, name="Coin"), [], {"Coin": "a/b"})
        marked = mark_duplicates([first, second])
        by_name = {r.project.name: r for r in marked}
        assert by_name["Coin"].status is ResolutionStatus.RESOLVED
        assert by_name["WrappedCoin"].status is ResolutionStatus.DUPLICATE
        assert by_name["WrappedCoin"].repo_id == "a/b"

    def test_distinct_repos_untouched(self):
        a = resolve_repo(entry(name="A", cmc_rank=1), [], {"A": "a/a"})
        b = resolve_repo(entry(name="B", cmc_rank=2), [], {"B": "b/b"})
        assert all(r.status is ResolutionStatus.RESOLVED for r in mark_duplicates([a, b]))
