/**
 * Per-device permission grid: app x resource -> effective verdict.
 *
 * Built purely from server responses: quick rules read straight out of the
 * active policy document (ids "user:<device>:<app>:<resource>") and verdicts
 * observed in the decisions feed. No rule matching happens here.
 */

import { DecisionRow } from "./api.js";

export interface GridCell {
  verdict: string;
  source: "toggle" | "observed";
  constrained: boolean;
}

export type PermissionGrid = Map<string, Map<string, GridCell>>;

interface PolicyRuleWire {
  id: string;
  app: string;
  resource: string;
  decision: string;
  constraints?: Record<string, unknown>;
}

const RULE_VERDICTS: Record<string, string> = {
  GRANT: "ALLOW",
  DENY: "DENY",
  SELECTIVE: "ALLOW_CONSTRAINED",
};

function cellFor(grid: PermissionGrid, app: string): Map<string, GridCell> {
  let row = grid.get(app);
  if (!row) {
    row = new Map();
    grid.set(app, row);
  }
  return row;
}

export function buildGrid(
  policyDocument: string,
  decisions: DecisionRow[],
  device: string,
): PermissionGrid {
  const grid: PermissionGrid = new Map();

  // Observed verdicts first (later decisions overwrite earlier ones).
  for (const d of decisions) {
    if (d.device !== device) {
      continue;
    }
    cellFor(grid, d.app).set(d.resource, {
      verdict: d.verdict,
      source: "observed",
      constrained: d.verdict === "ALLOW_CONSTRAINED",
    });
  }

  // Explicit toggles win over observations.
  let doc: { rules?: PolicyRuleWire[] };
  try {
    doc = JSON.parse(policyDocument) as { rules?: PolicyRuleWire[] };
  } catch {
    return grid;
  }
  const prefix = `user:${device}:`;
  for (const rule of doc.rules ?? []) {
    if (!rule.id.startsWith(prefix)) {
      continue;
    }
    cellFor(grid, rule.app).set(rule.resource, {
      verdict: RULE_VERDICTS[rule.decision] ?? rule.decision,
      source: "toggle",
      constrained: rule.decision === "SELECTIVE",
    });
  }
  return grid;
}

export function gridApps(grid: PermissionGrid): string[] {
  return [...grid.keys()].sort();
}

export function gridResources(grid: PermissionGrid): string[] {
  const out = new Set<string>();
  for (const row of grid.values()) {
    for (const resource of row.keys()) {
      out.add(resource);
    }
  }
  return [...out].sort();
}
