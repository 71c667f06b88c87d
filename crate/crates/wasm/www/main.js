import init, { preset, check, simulate, sine_basis_kappa } from "./pkg/neurofield_wasm.js";

const $ = (id) => document.getElementById(id);
const colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

function say(el, text) {
  el.textContent = text;
}

// log scale when everything is positive
function draw(report) {
  const c = $("plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const t = report.times;
  const names = report.metric_names;
  const cols = names.map((_, k) => report.metrics.map((row) => row[k]));
  const all = cols.flat().filter(Number.isFinite);
  const log = all.every((v) => v > 0);
  const f = log ? Math.log10 : (v) => v;
  let lo = Math.min(...all.map(f));
  let hi = Math.max(...all.map(f));
  if (hi - lo < 1e-12) { lo -= 1; hi += 1; }
  const pad = 40;
  const x = (v) => pad + (v - t[0]) / (t[t.length - 1] - t[0]) * (c.width - 2 * pad);
  const y = (v) => c.height - pad - (f(v) - lo) / (hi - lo) * (c.height - 2 * pad);
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad, c.width - 2 * pad, c.height - 2 * pad);
  g.font = "12px sans-serif";
  g.fillStyle = "#333";
  g.fillText(log ? `1e${lo.toFixed(1)}` : lo.toPrecision(3), 2, c.height - pad);
  g.fillText(log ? `1e${hi.toFixed(1)}` : hi.toPrecision(3), 2, pad + 10);
  g.fillText(`t = ${t[t.length - 1]}`, c.width - pad - 40, c.height - pad + 15);
  cols.forEach((v, k) => {
    g.strokeStyle = colours[k % colours.length];
    g.beginPath();
    v.forEach((val, i) => (i ? g.lineTo(x(t[i]), y(val)) : g.moveTo(x(t[i]), y(val))));
    g.stroke();
    g.fillStyle = g.strokeStyle;
    g.fillText(names[k], pad + 10 + 110 * k, pad - 8);
  });
}

function guarded(out, f) {
  try {
    f();
  } catch (e) {
    say(out, `error: ${e.message ?? e}`);
  }
}

await init();

$("load").onclick = () => guarded($("status"), () => {
  $("config").value = preset($("mode").value);
  say($("status"), "");
});

$("check").onclick = () => guarded($("status"), () => {
  const r = JSON.parse(check($("config").value));
  const star = r.alpha_star === null ? "undefined" : r.alpha_star.toFixed(6);
  say($("status"), `margin ${r.margin.toFixed(6)} (${r.dissipative ? "dissipative" : "not dissipative"})\n`
    + `alpha ${r.alpha} against threshold ${star}: ${r.gain_ok ? "ok" : "too small"}`);
});

$("run").onclick = () => guarded($("status"), () => {
  say($("status"), "running...");
  const start = performance.now();
  const r = JSON.parse(simulate($("config").value));
  const secs = ((performance.now() - start) / 1000).toFixed(2);
  const lines = r.summary.map((s) => `${s.name}: ${s.initial.toExponential(3)} -> ${s.last.toExponential(3)} (max ${s.max.toExponential(3)})`);
  if (r.lyapunov) lines.push(`decrease check: ${r.lyapunov.violations} violations`);
  lines.push(...r.warnings.map((w) => `warning: ${w}`));
  say($("status"), `${r.name} in ${secs} s\n${lines.join("\n")}`);
  draw(r);
});

$("pe").onclick = () => guarded($("pe-out"), () => {
  const k = sine_basis_kappa(+$("period").value, +$("kappa").value, +$("dim").value, 8);
  say($("pe-out"), `smallest window level ${k.toPrecision(10)}`);
});

$("load").onclick();
