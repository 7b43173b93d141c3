// SPDX-License-Identifier: MIT OR Apache-2.0

import init, { zipf_pmf, DocumentView, ngram_sentence, ngram_next_pmf } from "./pkg/hlab_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showZipf() {
  let p;
  try {
    p = zipf_pmf(num("zipf-exp"), num("zipf-n"));
  } catch (e) {
    $("zipf-head").textContent = String(e);
    return;
  }
  const bars = $("zipf-bars");
  bars.replaceChildren();
  for (const x of p) {
    const d = document.createElement("div");
    d.style.height = `${(100 * x) / p[0]}%`;
    d.title = x.toFixed(5);
    bars.appendChild(d);
  }
  $("zipf-head").textContent = Array.from(p.slice(0, 8), (x, i) => `p(${i}) = ${x.toFixed(5)}`).join("\n");
}

function showDocument() {
  let doc;
  try {
    doc = new DocumentView(num("doc-v"), BigInt(num("doc-seed")), BigInt(num("doc-id")), num("doc-d"));
  } catch (e) {
    $("doc-out").textContent = String(e);
    return;
  }
  const lines = [];
  for (let i = 0; i < doc.sentence_count(); i++) {
    lines.push(`#${i}  tokens     ${Array.from(doc.tokens(i)).join(" ")}`);
    lines.push(`    categories ${doc.categories(i)}`);
    lines.push(`    valid      ${doc.masks(i)}`);
    lines.push(`    tree       ${doc.bracketed(i)}`);
  }
  doc.free();
  $("doc-out").textContent = lines.join("\n");
}

function showNgram() {
  const v = num("ng-v");
  const seed = BigInt(num("ng-seed"));
  const mu = num("ng-mu");
  const sigma = num("ng-sigma");
  const lines = [];
  try {
    for (let i = 0; i < 5; i++) {
      const id = BigInt(Math.floor(Math.random() * 1e9));
      lines.push(Array.from(ngram_sentence(v, seed, mu, sigma, id)).join(" "));
    }
    const p = ngram_next_pmf(v, seed, mu, sigma, 0);
    lines.push("", `after token 0: p(0) = ${p[0].toFixed(4)}, p(1) = ${p[1].toFixed(4)}`);
  } catch (e) {
    lines.push(String(e));
  }
  $("ng-out").textContent = lines.join("\n");
}

await init();
for (const id of ["zipf-exp", "zipf-n"]) $(id).addEventListener("input", showZipf);
for (const id of ["doc-v", "doc-seed", "doc-id", "doc-d"]) $(id).addEventListener("input", showDocument);
$("ng-go").addEventListener("click", showNgram);
showZipf();
showDocument();
showNgram();
