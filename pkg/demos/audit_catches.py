"""Plant each misbehaviour in a short period and let the audits name the culprit."""

from mintchain.audit import audit_period
from mintchain.net.scenarios import MISBEHAVIOURS, honest_period


def main():
    for name, make in [*MISBEHAVIOURS.items(), ("honest", honest_period)]:
        sc = make()
        reports = audit_period(sc.archive, sc.bank_pk, sc.receipts)
        failed = [r for r in reports if not r.passed]
        blamed = sorted(set().union(*(r.implicated() for r in failed))) if failed else []
        kinds = sorted({f.kind for r in failed for f in r.findings})
        print(f"{name:<20} blamed={blamed or '-'} findings={kinds or '-'}")


if __name__ == "__main__":
    main()
