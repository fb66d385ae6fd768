"""Throughput as shards are added, under the simulated clock."""

from mintchain.net.bench import throughput_sweep

if __name__ == "__main__":
    sweep = throughput_sweep([3, 4, 5, 6, 9, 12], 3)
    for p in sweep.points:
        print(f"M={p.mintettes:>2} shards={p.shards} {p.steady_throughput:8.1f} tx/s")
    print(f"fit over M={sweep.fit_ms}: {sweep.slope:.1f} tx/s per mintette, R2={sweep.r_squared:.3f}")
