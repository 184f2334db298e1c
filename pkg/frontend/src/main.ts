/**
 * DOM bootstrap: wires the poll loop, permission toggles, and the policy
 * editor to the page. All state lives in the view-models; this file only
 * renders it.
 */

import { AdminApi, ThreatRow } from "./api.js";
import { ThreatFeed } from "./feed.js";
import { buildGrid, gridApps, PermissionGrid } from "./grid.js";
import { PolicyEditor } from "./editor.js";

const api = new AdminApi("");
const feed = new ThreatFeed(api);
const editor = new PolicyEditor(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function renderBanner(): void {
  const banner = el<HTMLDivElement>("banner");
  if (feed.state.disconnected) {
    banner.textContent = `disconnected from server - retrying (${feed.state.lastError ?? ""})`;
    banner.className = "banner banner-down";
  } else {
    banner.textContent = `live - policy v${currentVersion ?? "?"} - ${feed.state.rows.length} threats`;
    banner.className = "banner banner-up";
  }
}

function threatRowHtml(t: ThreatRow): string {
  const when = new Date(t.detected_at_ms).toISOString().slice(11, 19);
  const params = t.mitigation.params ? ` ${JSON.stringify(t.mitigation.params)}` : "";
  return (
    `<td>${when}</td><td>${t.device}</td><td>${t.app}</td>` +
    `<td>${t.type}</td><td class="sev-${t.severity.toLowerCase()}">${t.severity}</td>` +
    `<td>${t.status}</td><td class="mitigation">${t.mitigation.kind}${params}</td>`
  );
}

function renderNewThreats(fresh: ThreatRow[]): void {
  const body = el<HTMLTableSectionElement>("threat-rows");
  for (const t of fresh) {
    const tr = document.createElement("tr");
    tr.dataset.threatId = t.threat_id;
    tr.innerHTML = threatRowHtml(t);
    body.prepend(tr);
  }
}

let currentVersion: number | null = null;
let currentDevice = "";

async function refreshGrid(): Promise<void> {
  const [policy, decisions, devices] = await Promise.all([
    api.policies(),
    api.decisionsSince(0),
    api.devices(),
  ]);
  currentVersion = policy.version;
  const select = el<HTMLSelectElement>("device-select");
  const ids = devices.devices.map((d) => String(d.device_id));
  if (select.options.length !== ids.length) {
    select.innerHTML = ids.map((id) => `<option value="${id}">${id}</option>`).join("");
  }
  if (!currentDevice && ids.length > 0) {
    currentDevice = ids[0];
  }
  if (currentDevice) {
    select.value = currentDevice;
  }
  renderGrid(buildGrid(policy.document, decisions.items, currentDevice));
  el<HTMLSpanElement>("policy-version").textContent = `v${policy.version}`;
}

function renderGrid(grid: PermissionGrid): void {
  const table = el<HTMLTableElement>("grid");
  const resources = new Set<string>();
  for (const row of grid.values()) {
    for (const r of row.keys()) {
      resources.add(r);
    }
  }
  const cols = [...resources].sort();
  const head = `<tr><th>app</th>${cols.map((c) => `<th>${c}</th>`).join("")}</tr>`;
  const rows = gridApps(grid)
    .map((app) => {
      const cells = cols
        .map((resource) => {
          const cell = grid.get(app)?.get(resource);
          if (!cell) {
            return "<td>-</td>";
          }
          const klass = cell.source === "toggle" ? "cell-toggle" : "cell-observed";
          const mark = cell.constrained ? "*" : "";
          return `<td class="${klass}">${cell.verdict}${mark}</td>`;
        })
        .join("");
      return `<tr><th>${app}</th>${cells}</tr>`;
    })
    .join("");
  table.innerHTML = head + rows;
}

async function pollLoop(): Promise<void> {
  const fresh = await feed.tick();
  renderNewThreats(fresh);
  renderBanner();
  window.setTimeout(pollLoop, feed.nextDelayMs());
}

function bindToggleForm(): void {
  el<HTMLFormElement>("toggle-form").addEventListener("submit", (evt) => {
    evt.preventDefault();
    const app = el<HTMLInputElement>("toggle-app").value.trim();
    const resource = el<HTMLSelectElement>("toggle-resource").value;
    const verdict = el<HTMLSelectElement>("toggle-verdict").value;
    const out = el<HTMLSpanElement>("toggle-result");
    const constraints =
      verdict === "SELECTIVE" ? { max_per_window: { count: 5, window_s: 60 } } : undefined;
    void api
      .togglePermission(currentDevice, app, resource, verdict, constraints)
      .then((result) => {
        if (result.ok) {
          out.textContent = `saved as policy v${result.version}`;
          out.className = "ok";
          return refreshGrid();
        }
        out.textContent = result.error.message;
        out.className = "error";
        return undefined;
      })
      .catch((err) => {
        out.textContent = String(err);
        out.className = "error";
      });
  });
}

function renderEditor(): void {
  const status = el<HTMLDivElement>("editor-status");
  const annotations = el<HTMLDivElement>("editor-annotations");
  annotations.innerHTML = "";
  if (editor.state.error) {
    const line = editor.state.error.line;
    status.textContent = line
      ? `rejected at line ${line}: ${editor.state.error.message}`
      : `rejected: ${editor.state.error.message}`;
    status.className = "error";
    if (line) {
      for (const row of editor.annotatedLines()) {
        if (row.error) {
          annotations.innerHTML = `<pre class="anchor">line ${row.lineno}: ${row.text
            .replace(/&/g, "&amp;")
            .replace(/</g, "&lt;")}\n^ ${row.error}</pre>`;
        }
      }
    }
  } else if (editor.state.staleWarning) {
    status.textContent =
      "saved, but another edit landed first - reload to see the merged history";
    status.className = "warn";
  } else if (editor.state.savedVersion !== null) {
    status.textContent = `saved as policy v${editor.state.savedVersion}`;
    status.className = "ok";
  } else {
    status.textContent = "";
  }
}

function bindEditor(): void {
  const textarea = el<HTMLTextAreaElement>("editor-text");
  el<HTMLButtonElement>("editor-load").addEventListener("click", () => {
    void editor.load().then(() => {
      textarea.value = editor.state.text;
      renderEditor();
    });
  });
  el<HTMLButtonElement>("editor-save").addEventListener("click", () => {
    editor.state.text = textarea.value;
    void editor.save().then(() => {
      renderEditor();
      return refreshGrid();
    });
  });
}

function bindDeviceSelect(): void {
  el<HTMLSelectElement>("device-select").addEventListener("change", (evt) => {
    currentDevice = (evt.target as HTMLSelectElement).value;
    void refreshGrid();
  });
}

window.addEventListener("DOMContentLoaded", () => {
  bindToggleForm();
  bindEditor();
  bindDeviceSelect();
  void refreshGrid().catch(() => undefined);
  void pollLoop();
  window.setInterval(() => void refreshGrid().catch(() => undefined), 10_000);
});
