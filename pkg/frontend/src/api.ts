/**
 * Typed client for the engine's admin API. The console performs no policy
 * evaluation of its own: everything it shows comes back from these calls.
 */

export interface MitigationWire {
  kind: string;
  params?: Record<string, unknown>;
}

export interface ThreatRow {
  threat_id: string;
  device: string;
  app: string;
  event_seqs: number[];
  type: string;
  severity: string;
  status: string;
  mitigation: MitigationWire;
  detected_at_ms: number;
}

export interface ThreatsPage {
  items: ThreatRow[];
  cursor: number;
}

export interface DecisionRow {
  device: string;
  seq: number;
  verdict: string;
  rule: string;
  policy_version: number;
  app: string;
  resource: string;
  action: string;
  state: string;
  at_ms: number;
  constraints?: Record<string, unknown>;
  mitigation?: MitigationWire;
}

export interface DecisionsPage {
  items: DecisionRow[];
  cursor: number;
}

export interface PolicyInfo {
  version: number;
  document: string;
}

export interface ApiErrorDetail {
  message: string;
  kind?: string;
  line?: number | null;
  col?: number | null;
}

export type SaveResult =
  | { ok: true; version: number }
  | { ok: false; status: number; error: ApiErrorDetail };

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class AdminApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!resp.ok) {
      throw new Error(`GET ${path} -> ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  threatsSince(cursor: number): Promise<ThreatsPage> {
    return this.getJson<ThreatsPage>(`/threats?since=${cursor}`);
  }

  decisionsSince(cursor: number): Promise<DecisionsPage> {
    return this.getJson<DecisionsPage>(`/decisions?since=${cursor}`);
  }

  policies(): Promise<PolicyInfo> {
    return this.getJson<PolicyInfo>("/policies");
  }

  devices(): Promise<{ devices: Array<Record<string, unknown>> }> {
    return this.getJson(`/devices`);
  }

  async putPolicies(document: string): Promise<SaveResult> {
    const resp = await this.fetchFn(`${this.baseUrl}/policies`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: document,
    });
    const body = (await resp.json()) as { version?: number; error?: ApiErrorDetail };
    if (resp.ok && typeof body.version === "number") {
      return { ok: true, version: body.version };
    }
    return {
      ok: false,
      status: resp.status,
      error: body.error ?? { message: `unexpected ${resp.status} response` },
    };
  }

  async togglePermission(
    device: string,
    app: string,
    resource: string,
    verdict: string,
    constraints?: Record<string, unknown>,
  ): Promise<SaveResult> {
    const resp = await this.fetchFn(`${this.baseUrl}/permissions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        device_id: device,
        app_id: app,
        resource,
        verdict,
        ...(constraints ? { constraints } : {}),
      }),
    });
    const body = (await resp.json()) as { version?: number; error?: ApiErrorDetail };
    if (resp.ok && typeof body.version === "number") {
      return { ok: true, version: body.version };
    }
    return {
      ok: false,
      status: resp.status,
      error: body.error ?? { message: `unexpected ${resp.status} response` },
    };
  }

  async liftQuarantine(device: string, app: string): Promise<boolean> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/quarantine/${encodeURIComponent(device)}/${encodeURIComponent(app)}/lift`,
      { method: "POST" },
    );
    if (!resp.ok) {
      return false;
    }
    const body = (await resp.json()) as { lifted: boolean };
    return body.lifted;
  }
}
