import pytest
from judge_agent_forest.cohort import Cohort, CohortSchema, QueryResponsePair, SideInfo


def make_pair(instance_id: str, software: str = "etcd", tenant: str = "t1", embedding=None, response=None):
    return QueryResponsePair(
        id=instance_id,
        query_text=f"What needs fixing on {instance_id}?",
        response_text=response if response is not None else f"REQUIRES: {software}",
        side_info=SideInfo(query_side={"tenant": tenant}, response_side={"software": software}),
        embedding=embedding,
        metadata={"tenant": tenant},
    )


def make_cohort(pairs, cohort_id: str = "test-cohort") -> Cohort:
    dims = {len(p.embedding) for p in pairs if p.embedding is not None}
    return Cohort(
        cohort_id=cohort_id,
        embedding_dim=dims.pop() if dims else None,
        side_info_schema=CohortSchema(query_side=("tenant",), response_side=("software",)),
        instances=tuple(pairs),
    )


@pytest.fixture
def small_cohort() -> Cohort:
    return make_cohort(
        [
            make_pair("a1", "etcd", "t1", (0.0, 1.0)),
            make_pair("a2", "etcd", "t1", (0.1, 0.9)),
            make_pair("a3", "nginx", "t2", (1.0, 0.0)),
            make_pair("a4", "nginx,etcd", "t2", (0.9, 0.2)),
            make_pair("a5", "redis", "t1", (-1.0, 0.0)),
        ]
    )
