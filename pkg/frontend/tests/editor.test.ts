import { describe, expect, it } from "vitest";

import { AdminApi } from "../src/api.js";
import { PolicyEditor } from "../src/editor.js";
import { scriptedFetch } from "./helpers.js";

const DOC = '{\n  "version": 1,\n  "defaults": {},\n  "rules": []\n}\n';

describe("policy editor", () => {
  it("loads the active document and version", async () => {
    const { fetchFn } = scriptedFetch([{ body: { version: 4, document: DOC } }]);
    const editor = new PolicyEditor(new AdminApi("http://x", fetchFn));
    await editor.load();
    expect(editor.state.text).toBe(DOC);
    expect(editor.state.loadedVersion).toBe(4);
  });

  it("saves and records the committed version", async () => {
    const { fetchFn } = scriptedFetch([
      { body: { version: 4, document: DOC } },
      { body: { version: 5 } },
    ]);
    const editor = new PolicyEditor(new AdminApi("http://x", fetchFn));
    await editor.load();
    expect(await editor.save()).toBe(true);
    expect(editor.state.savedVersion).toBe(5);
    expect(editor.state.staleWarning).toBe(false);
    expect(editor.state.error).toBeNull();
  });

  it("anchors a 422 to the offending line", async () => {
    const { fetchFn } = scriptedFetch([
      { body: { version: 4, document: 'line one\nline two\nline three' } },
      {
        status: 422,
        body: { error: { message: "duplicate rule id: 'dup'", kind: "DuplicateRule", line: 2, col: null } },
      },
    ]);
    const editor = new PolicyEditor(new AdminApi("http://x", fetchFn));
    await editor.load();
    expect(await editor.save()).toBe(false);
    expect(editor.state.error?.line).toBe(2);
    const annotated = editor.annotatedLines();
    expect(annotated[1].error).toContain("duplicate rule id");
    expect(annotated[0].error).toBeNull();
    expect(annotated[2].error).toBeNull();
  });

  it("warns when another edit won the race", async () => {
    // loaded v4; meanwhile someone committed v5, so our save lands as v6
    const { fetchFn } = scriptedFetch([
      { body: { version: 4, document: DOC } },
      { body: { version: 6 } },
    ]);
    const editor = new PolicyEditor(new AdminApi("http://x", fetchFn));
    await editor.load();
    expect(await editor.save()).toBe(true);
    expect(editor.state.staleWarning).toBe(true);
  });

  it("clears the stale warning on reload", async () => {
    const { fetchFn } = scriptedFetch([
      { body: { version: 4, document: DOC } },
      { body: { version: 6 } },
      { body: { version: 6, document: DOC } },
    ]);
    const editor = new PolicyEditor(new AdminApi("http://x", fetchFn));
    await editor.load();
    await editor.save();
    expect(editor.state.staleWarning).toBe(true);
    await editor.load();
    expect(editor.state.staleWarning).toBe(false);
    expect(editor.state.loadedVersion).toBe(6);
  });
});
