"""Plan the guiding trajectory of each bundled scene and look at what the field did.

Run: python3 demos/01_guiding_field.py
"""

import numpy as np

from vflpc.runner import Planner, repulsive_clearance
from vflpc.scenario import bundled_scenes, load_scenario

for name in bundled_scenes():
    scn = load_scenario(name)
    tr = Planner(scn).plan(scn.start, 0.0)
    pts = tr.points
    print(f"\n{name}: {len(tr)} points, {tr.arc_length()[-1]:.1f} m, status {tr.status}")

    # lateral acceleration stays under the bound because speed is planned from curvature
    lat = tr.speeds ** 2 * tr.curvatures
    print(f"  speed {tr.speeds.min():.2f}..{tr.speeds.max():.2f} m/s, max v^2 kappa {lat.max():.3f} "
          f"(a_max {scn.field.a_max})")

    for o in scn.actual:
        d = [repulsive_clearance(o, p, 0.0) for p in pts]
        k = int(np.argmin(d))
        print(f"  {o.name}: closest approach {d[k]:.2f} m outside the repulsive boundary at x={pts[k, 0]:.1f}")

    # how far the trajectory leaves the desired path
    phi = np.array([scn.path.value(p) for p in pts])
    print(f"  max |path level| {np.max(np.abs(phi)):.2f}")
