/**
 * Policy editor state machine: load the active document, save it whole, and
 * surface validation failures at the offending line. A save that lands more
 * than one version ahead of what was loaded means someone else committed in
 * between; the editor flags that instead of silently clobbering.
 */

import { AdminApi, ApiErrorDetail } from "./api.js";

export interface EditorState {
  text: string;
  loadedVersion: number | null;
  savedVersion: number | null;
  error: ApiErrorDetail | null;
  staleWarning: boolean;
}

export class PolicyEditor {
  readonly state: EditorState = {
    text: "",
    loadedVersion: null,
    savedVersion: null,
    error: null,
    staleWarning: false,
  };

  constructor(private readonly api: AdminApi) {}

  async load(): Promise<void> {
    const info = await this.api.policies();
    this.state.text = info.document;
    this.state.loadedVersion = info.version;
    this.state.error = null;
    this.state.staleWarning = false;
  }

  async save(): Promise<boolean> {
    const result = await this.api.putPolicies(this.state.text);
    if (!result.ok) {
      this.state.error = result.error;
      return false;
    }
    this.state.error = null;
    this.state.savedVersion = result.version;
    if (this.state.loadedVersion !== null && result.version !== this.state.loadedVersion + 1) {
      // someone else committed a version while we were editing
      this.state.staleWarning = true;
    }
    this.state.loadedVersion = result.version;
    return true;
  }

  /** Line-anchored rendering model for the current error (1-indexed). */
  annotatedLines(): Array<{ lineno: number; text: string; error: string | null }> {
    const at = this.state.error?.line ?? null;
    return this.state.text.split("\n").map((text, i) => ({
      lineno: i + 1,
      text,
      error: at !== null && i + 1 === at ? this.state.error?.message ?? null : null,
    }));
  }
}
