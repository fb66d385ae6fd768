"""A gbp/usd swap run to completion, then with the counterparty walking away."""

from mintchain.fx import ExchangeTerms, Role, run_exchange

TERMS = ExchangeTerms("gbp", "usd", m=30, n=40, t1=6, t2=4)


def show(title, outcome):
    print(f"{title}: {outcome.kind.value}")
    for party, action, target, detail in outcome.trace:
        if action in ("publish", "claim", "refund", "refuse"):
            print(f"  {party} {action:<8} {target} {detail}")
    moved = {f"{r.value}/{c}": d for (r, c), d in sorted(outcome.deltas.items()) if d}
    print(f"  balances moved: {moved or 'none'}")


if __name__ == "__main__":
    show("honest", run_exchange(TERMS))
    show("B leaves after countersigning", run_exchange(TERMS, abort=(Role.B, 1)))
    show("approver declines", run_exchange(TERMS, approved=set()))
