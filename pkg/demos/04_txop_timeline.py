"""Trace one coordinated TXOP frame by frame.

Runs a short simulation with event tracing enabled and prints the frame
sequence of the first sounded TXOP: invite, response, the joint-NDP
exchange with per-STA compressed feedback, the trigger and the data phase.
"""

import numpy as np

from cobfsim.harness import Scenario, run_deployment

scenario = Scenario(mode="cobf_st", stas_per_ap=2, load="high",
                    deployments=1, duration_s=0.05, seed=8)
result = run_deployment(scenario, 0, collect_trace=True)

sounded = next(r for r in result.records if r.sounding_airtime > 0)
print(f"TXOP owner AP {sounded.owner}, mode {sounded.mode}")
print(f"  span           : {sounded.t_start * 1e3:.3f} -> {sounded.t_end * 1e3:.3f} ms "
      f"(limit 5.484 ms)")
print(f"  sounding       : {sounded.sounding_airtime * 1e3:.3f} ms")
print(f"  data           : {sounded.data_airtime * 1e3:.3f} ms")
print(f"  CSI fed back   : {sounded.csi_bits_fed_back} bits "
      f"for STAs {sounded.scheduled}")
print(f"  MPDUs          : {sounded.mpdus_ok} delivered, {sounded.mpdus_failed} failed")

print("\nframe sequence inside the TXOP:")
frames = [e for e in result.trace
          if e["kind"] == "frame-end" and sounded.t_start <= e["t"] <= sounded.t_end]
for e in frames:
    extra = {k: v for k, v in e.items() if k not in ("t", "kind", "frame")}
    print(f"  t={e['t'] * 1e3:8.3f} ms  {e['frame']:<18} {extra if extra else ''}")

print("\nevent counts over the whole run:")
kinds = {}
for e in result.trace:
    kinds[e["kind"]] = kinds.get(e["kind"], 0) + 1
for kind, count in sorted(kinds.items()):
    print(f"  {kind:<16} {count}")
