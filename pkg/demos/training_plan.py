"""The staged training schedule for multi-pathway models, as data.

Nothing is trained here; the plan says which tensors update in which stage
and where their starting weights come from.
"""
from evenhancer.train_plan import build_plan, format_plan, validate_plan

plan = build_plan(2)
text = format_plan(plan)
print("\n".join(text.splitlines()[:12]))
print("...", len(text.splitlines()), "lines in total")
print("problems:", validate_plan(plan))

for st in plan:
    print("stage", st.stage, "iterations", st.iterations, "spatial scale", st.spatial)
    for net in st.networks:
        print("   network", net.network, "updates", len(net.updatable()), "frozen", len(net.frozen()))

print("stage-2 scale draws:", plan.scale_samples(2, 5).round(3))

for N in (1, 3):
    p = build_plan(N)
    print("N=%d stages %d, last stage networks %d, valid %s" % (N, len(p.stages), len(p.stage(3).networks),
                                                               not validate_plan(p)))
