/**
 * Round-trip acceptance against the real Python server: a permission toggle
 * leads to a BLOCK row in the feed within two poll intervals, and the editor
 * surfaces line-anchored 422s. Requires the seaas package to be installed
 * (pip install -e ..).
 */

import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AdminApi } from "../src/api.js";
import { PolicyEditor } from "../src/editor.js";
import { ThreatFeed } from "../src/feed.js";
import { buildGrid } from "../src/grid.js";

const PYTHON = process.env.SEAAS_PYTHON ?? "python3";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr && typeof addr === "object") {
        const port = addr.port;
        srv.close(() => resolve(port));
      } else {
        reject(new Error("no address"));
      }
    });
  });
}

const DUPLICATE_DOC = [
  "{",
  '  "version": 1,',
  '  "defaults": {"CRITICAL": "DENY", "NORMAL": "GRANT"},',
  '  "rules": [',
  '    {"id": "dup", "priority": 1, "app": "*", "resource": "*", "action": "*", "decision": "DENY"},',
  '    {"id": "dup", "priority": 2, "app": "*", "resource": "*", "action": "*", "decision": "DENY"}',
  "  ]",
  "}",
].join("\n");

let server: ChildProcess;
let devicePort: number;
let api: AdminApi;

async function waitForServer(base: string): Promise<void> {
  for (let i = 0; i < 100; i += 1) {
    try {
      const resp = await fetch(`${base}/policies`);
      if (resp.ok) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error("server did not come up");
}

beforeAll(async () => {
  devicePort = await freePort();
  const adminPort = await freePort();
  server = spawn(
    PYTHON,
    [
      "-c",
      "from seaas.cli import server_main; import sys; sys.exit(server_main())",
      "--listen",
      `127.0.0.1:${devicePort}`,
      "--admin",
      `127.0.0.1:${adminPort}`,
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  api = new AdminApi(`http://127.0.0.1:${adminPort}`);
  await waitForServer(`http://127.0.0.1:${adminPort}`);
}, 30_000);

afterAll(() => {
  server?.kill();
});

function runAgent(scriptPath: string): void {
  const result = spawnSync(
    PYTHON,
    [
      "-c",
      "from seaas.cli import agent_main; import sys; sys.exit(agent_main())",
      "run",
      "--script",
      scriptPath,
      "--mode",
      "offloaded",
      "--server",
      `127.0.0.1:${devicePort}`,
      "--report",
      join(tmpdir(), `agent-report-${Date.now()}.json`),
    ],
    { encoding: "utf-8" },
  );
  if (result.status !== 0) {
    throw new Error(`agent run failed: ${result.stdout}\n${result.stderr}`);
  }
}

describe("console against a live server", () => {
  it(
    "toggle to DENY makes the next matching threat row display BLOCK within 2 polls",
    async () => {
      const device = "user_7";
      const app = "com.eval.cam";

      const toggled = await api.togglePermission(device, app, "MICROPHONE", "DENY");
      expect(toggled.ok).toBe(true);

      // a device now tries exactly that access
      const dir = mkdtempSync(join(tmpdir(), "seaas-console-"));
      const script = join(dir, `${device}.jsonl`);
      writeFileSync(
        script,
        JSON.stringify({
          at_ms: 1000,
          app,
          resource: "MICROPHONE",
          action: "RECORD",
          app_state: "FOREGROUND",
          payload_bytes: 16,
          label: "threat:POLICY_VIOLATION",
        }) + "\n",
      );
      runAgent(script);

      const feed = new ThreatFeed(api, 100);
      let row = null;
      for (let polls = 0; polls < 2 && !row; polls += 1) {
        const fresh = await feed.tick();
        row = fresh.find((t) => t.app === app) ?? null;
        if (!row) {
          await new Promise((r) => setTimeout(r, feed.pollIntervalMs));
        }
      }
      expect(row, "threat row for the toggled app").toBeTruthy();
      expect(row?.type).toBe("POLICY_VIOLATION");
      expect(row?.mitigation.kind).toBe("BLOCK");
      expect(row?.status).toBe("MITIGATED");

      // and the grid shows the explicit toggle
      const [policy, decisions] = await Promise.all([api.policies(), api.decisionsSince(0)]);
      const cell = buildGrid(policy.document, decisions.items, device).get(app)?.get("MICROPHONE");
      expect(cell?.verdict).toBe("DENY");
      expect(cell?.source).toBe("toggle");
    },
    30_000,
  );

  it("policy editor surfaces a 422 with a line anchor on duplicate rules", async () => {
    const editor = new PolicyEditor(api);
    await editor.load();
    const before = editor.state.loadedVersion;
    editor.state.text = DUPLICATE_DOC;
    expect(await editor.save()).toBe(false);
    expect(editor.state.error?.kind).toBe("DuplicateRule");
    expect(editor.state.error?.line).toBe(6);
    const annotated = editor.annotatedLines();
    expect(annotated[5].error).toContain("duplicate rule id");
    // rejected save leaves the active version unchanged
    const info = await api.policies();
    expect(info.version).toBe(before);
  });

  it("feed resumes from its cursor after a server restart", async () => {
    const adminPort = Number(api.baseUrl.split(":").pop());
    const feed = new ThreatFeed(api, 50);
    await feed.tick();
    const rowsBefore = feed.state.rows.length;
    const cursorBefore = feed.state.cursor;
    expect(rowsBefore).toBeGreaterThan(0);

    server.kill();
    await new Promise((r) => setTimeout(r, 300));
    await feed.tick();
    expect(feed.state.disconnected).toBe(true);
    expect(feed.state.cursor).toBe(cursorBefore); // banner up, cursor preserved

    // revive the server on the same ports; the feed object is untouched
    server = spawn(
      PYTHON,
      [
        "-c",
        "from seaas.cli import server_main; import sys; sys.exit(server_main())",
        "--listen",
        `127.0.0.1:${devicePort}`,
        "--admin",
        `127.0.0.1:${adminPort}`,
      ],
      { stdio: ["ignore", "pipe", "pipe"] },
    );
    await waitForServer(api.baseUrl);
    await feed.tick();
    expect(feed.state.disconnected).toBe(false);
    expect(feed.state.rows.length).toBe(rowsBefore); // no duplicates re-rendered
  }, 30_000);
});
