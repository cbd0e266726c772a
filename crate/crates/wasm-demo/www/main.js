import init, { edgeworth_comparison, expansion_residuals, hermite_table } from "./pkg/brwre_wasm_demo.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const $ = (id) => document.getElementById(id);

function rows(flat, width) {
  const out = [];
  for (let i = 0; i < flat.length; i += width) out.push(Array.from(flat.slice(i, i + width)));
  return out;
}

function axes(ctx, w, h, pad, xr, yr) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "11px monospace";
  ctx.fillText(xr[0].toPrecision(3), pad, h - pad + 14);
  ctx.fillText(xr[1].toPrecision(3), w - pad - 30, h - pad + 14);
  ctx.fillText(yr[1].toPrecision(3), 2, pad + 4);
  ctx.fillText(yr[0].toPrecision(3), 2, h - pad);
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0])) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - yr[0]) / (yr[1] - yr[0])) * (h - 2 * pad);
  return [sx, sy];
}

function drawEdgeworth() {
  const family = $("ew-family").value;
  const len = Number($("ew-len").value);
  $("ew-len-val").textContent = len;
  const data = rows(edgeworth_comparison(family, len, 241), 5);
  const series = [
    ["Φ − exact", (r) => r[2] - r[1]],
    ["EW3 − exact", (r) => r[3] - r[1]],
    ["EW5 − exact", (r) => r[4] - r[1]],
  ];
  let ymax = 1e-12;
  for (const [, f] of series) for (const r of data) ymax = Math.max(ymax, Math.abs(f(r)));
  const c = $("ew-canvas");
  const ctx = c.getContext("2d");
  const [sx, sy] = axes(ctx, c.width, c.height, 40, [-3, 3], [-ymax, ymax]);
  series.forEach(([, f], k) => {
    ctx.strokeStyle = COLORS[k];
    ctx.beginPath();
    data.forEach((r, i) => (i ? ctx.lineTo(sx(r[0]), sy(f(r))) : ctx.moveTo(sx(r[0]), sy(f(r)))));
    ctx.stroke();
  });
  $("ew-legend").innerHTML = series
    .map(([name, f], k) => {
      const sup = Math.max(...data.map((r) => Math.abs(f(r))));
      return `<span style="color:${COLORS[k]}">${name}: sup ${sup.toExponential(2)}</span>`;
    })
    .join("");
}

function median(v) {
  const s = [...v].sort((a, b) => a - b);
  const m = s.length >> 1;
  return s.length % 2 ? s[m] : (s[m - 1] + s[m]) / 2;
}

function runExpansion() {
  const n = Number($("ex-n").value);
  const t = Number($("ex-t").value);
  const reps = Number($("ex-r").value);
  const seed = Number($("ex-seed").value) >>> 0;
  const data = rows(expansion_residuals(seed, n, reps, t), 5);
  if (!data.length) {
    $("ex-stats").textContent = "no surviving replicas";
    return;
  }
  let lo = Infinity, hi = -Infinity;
  for (const r of data) for (const v of r) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  const c = $("ex-canvas");
  const ctx = c.getContext("2d");
  const [sx, sy] = axes(ctx, c.width, c.height, 40, [lo, hi], [lo, hi]);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.moveTo(sx(lo), sy(lo));
  ctx.lineTo(sx(hi), sy(hi));
  ctx.stroke();
  for (let k = 0; k < 4; k++) {
    ctx.fillStyle = COLORS[k];
    for (const r of data) ctx.fillRect(sx(r[1 + k]) - 1.5, sy(r[0]) - 1.5, 3, 3);
  }
  const meds = [0, 1, 2, 3].map((k) => median(data.map((r) => Math.abs(r[0] - r[1 + k]))));
  $("ex-stats").innerHTML =
    `${data.length} surviving replicas; x = rhs<sub>κ</sub>, y = simulated value. median |residual|: ` +
    meds.map((m, k) => `<span style="color:${COLORS[k]}">κ=${k}: ${m.toExponential(3)}</span>`).join(", ");
}

function drawHermite() {
  const x = Number($("h-x").value);
  const m = Number($("h-m").value);
  const data = rows(hermite_table(x, m), 3);
  $("h-table").innerHTML =
    "<tr><th>m</th><th>explicit</th><th>recurrence</th></tr>" +
    data.map((r) => `<tr><td>${r[0]}</td><td>${r[1].toPrecision(12)}</td><td>${r[2].toPrecision(12)}</td></tr>`).join("");
}

function guard(f) {
  return () => {
    try {
      $("error").textContent = "";
      f();
    } catch (e) {
      $("error").textContent = String(e);
    }
  };
}

await init();
$("ew-family").addEventListener("change", guard(drawEdgeworth));
$("ew-len").addEventListener("input", guard(drawEdgeworth));
$("ex-run").addEventListener("click", guard(runExpansion));
$("h-x").addEventListener("input", guard(drawHermite));
$("h-m").addEventListener("input", guard(drawHermite));
guard(drawEdgeworth)();
guard(drawHermite)();
guard(runExpansion)();
